//! Polynomial vector fields `dy_i/dx = Σ_j κ_ij Π_k y_k^γ_ijk`.
//!
//! A [`PolynomialODE`] stores each equation as a sparse list of
//! [`Monomial`]s. A [`SystemDefinition`] adds named parameters and
//! perturbation groups, so a field can be split as
//! `f = b + Σ_s Σ_k ε_s^k g^(sk)`.
//!
//! # Text format
//!
//! ```text
//! # Duffing oscillator
//! var q p
//! param eps 0.1
//! dq = 1 p
//! dp = -1 q
//! perturb eps
//! dp = -1 q^3
//! ```
//!
//! Lines are `var NAME+`, `param NAME VALUE`, `perturb NAME [ORDER]` or
//! `dNAME = monomials` where monomials are separated by `;` and each one is
//! a decimal coefficient followed by factors `NAME` or `NAME^INT`. The name
//! `x` is the independent variable; systems using it must be autonomized
//! before they can be linearized. `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::error::{Error, Result};
use crate::linalg::RealMatrix;

/// Reserved name of the independent variable.
pub const INDEPENDENT_VAR: &str = "x";

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}, column {col}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("invalid coefficient `{0}`")]
    BadCoefficient(String),
    #[error("exponent `{0}` is not a nonnegative integer")]
    BadExponent(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("duplicate name `{0}`")]
    Duplicate(String),
    #[error("no `var` declaration before first equation")]
    MissingVars,
}

/// One term `coeff · x^x_power · Π_k y_k^exponents[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coeff: f64,
    pub exponents: Vec<u32>,
    pub x_power: u32,
}

impl Monomial {
    pub fn new(coeff: f64, exponents: Vec<u32>) -> Self {
        Monomial {
            coeff,
            exponents,
            x_power: 0,
        }
    }

    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    fn same_powers(&self, other: &Monomial) -> bool {
        self.x_power == other.x_power && self.exponents == other.exponents
    }

    #[inline]
    fn eval(&self, x: f64, y: &[f64]) -> f64 {
        let mut v = self.coeff;
        for (&yk, &g) in y.iter().zip(&self.exponents) {
            if g > 0 {
                v *= yk.powi(g as i32);
            }
        }
        if self.x_power > 0 {
            v *= x.powi(self.x_power as i32);
        }
        v
    }
}

/// A polynomial vector field in `n` state variables.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialODE {
    var_names: Vec<String>,
    equations: Vec<Vec<Monomial>>,
}

impl PolynomialODE {
    /// Builds a field, merging repeated monomials and dropping zero
    /// coefficients.
    pub fn new(var_names: Vec<String>, equations: Vec<Vec<Monomial>>) -> Result<Self> {
        let n = var_names.len();
        if n == 0 {
            return Err(Error::InvalidArgument("system has no variables".into()));
        }
        if equations.len() != n {
            return Err(Error::dim(format!(
                "{} equations for {n} variables",
                equations.len()
            )));
        }
        let mut merged = Vec::with_capacity(n);
        for eq in equations {
            let mut out: Vec<Monomial> = Vec::with_capacity(eq.len());
            for mono in eq {
                if mono.exponents.len() != n {
                    return Err(Error::dim(format!(
                        "monomial has {} exponents, system has {n} variables",
                        mono.exponents.len()
                    )));
                }
                if !mono.coeff.is_finite() {
                    return Err(Error::InvalidArgument("non-finite coefficient".into()));
                }
                match out.iter_mut().find(|m| m.same_powers(&mono)) {
                    Some(m) => m.coeff += mono.coeff,
                    None => out.push(mono),
                }
            }
            out.retain(|m| m.coeff != 0.0);
            merged.push(out);
        }
        Ok(PolynomialODE {
            var_names,
            equations: merged,
        })
    }

    /// Field with no monomials at all.
    pub fn zero(var_names: Vec<String>) -> Result<Self> {
        let n = var_names.len();
        PolynomialODE::new(var_names, vec![Vec::new(); n])
    }

    pub fn n(&self) -> usize {
        self.var_names.len()
    }

    /// Largest number of monomials in any equation.
    pub fn nt(&self) -> usize {
        self.equations.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    pub fn equations(&self) -> &[Vec<Monomial>] {
        &self.equations
    }

    pub fn equation(&self, i: usize) -> &[Monomial] {
        &self.equations[i]
    }

    pub fn is_autonomous(&self) -> bool {
        self.monomials().all(|m| m.x_power == 0)
    }

    pub fn is_zero(&self) -> bool {
        self.equations.iter().all(Vec::is_empty)
    }

    fn monomials(&self) -> impl Iterator<Item = &Monomial> {
        self.equations.iter().flatten()
    }

    /// Highest total degree in the state variables.
    pub fn max_degree(&self) -> u32 {
        self.monomials().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Highest exponent of any single variable.
    pub fn max_exponent(&self) -> u32 {
        self.monomials()
            .flat_map(|m| m.exponents.iter().copied())
            .max()
            .unwrap_or(0)
    }

    /// Dense F-array `n × nt × (n+1)`: slot 0 is the coefficient, slots
    /// `1..=n` the exponents. Unused monomial slots are all zero.
    pub fn f_array(&self) -> Vec<Vec<Vec<f64>>> {
        let (n, nt) = (self.n(), self.nt());
        self.equations
            .iter()
            .map(|eq| {
                (0..nt)
                    .map(|j| {
                        let mut row = vec![0.0; n + 1];
                        if let Some(m) = eq.get(j) {
                            row[0] = m.coeff;
                            for (slot, &g) in row[1..].iter_mut().zip(&m.exponents) {
                                *slot = g as f64;
                            }
                        }
                        row
                    })
                    .collect()
            })
            .collect()
    }

    /// `f(y)` for an autonomous field.
    pub fn evaluate_rhs(&self, y: &[f64]) -> Vec<f64> {
        self.evaluate_rhs_at(0.0, y)
    }

    /// `f(x, y)`.
    pub fn evaluate_rhs_at(&self, x: f64, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.n());
        self.equations
            .iter()
            .map(|eq| eq.iter().map(|m| m.eval(x, y)).sum())
            .collect()
    }

    /// In-place variant used by the integrator.
    pub fn evaluate_into(&self, x: f64, y: &[f64], out: &mut [f64]) {
        for (o, eq) in out.iter_mut().zip(&self.equations) {
            *o = eq.iter().map(|m| m.eval(x, y)).sum();
        }
    }

    /// `self + s · other` on the same variables.
    pub fn add_scaled(&self, s: f64, other: &PolynomialODE) -> Result<PolynomialODE> {
        if self.var_names != other.var_names {
            return Err(Error::dim("fields are defined on different variables"));
        }
        let equations = self
            .equations
            .iter()
            .zip(&other.equations)
            .map(|(a, b)| {
                a.iter()
                    .cloned()
                    .chain(b.iter().map(|m| Monomial {
                        coeff: s * m.coeff,
                        ..m.clone()
                    }))
                    .collect()
            })
            .collect();
        PolynomialODE::new(self.var_names.clone(), equations)
    }

    /// The matrix `A` when the field is exactly `f(y) = A y`.
    pub fn linear_matrix(&self) -> Option<RealMatrix> {
        let n = self.n();
        let mut a = RealMatrix::zeros(n, n);
        for (i, eq) in self.equations.iter().enumerate() {
            for m in eq {
                if m.x_power != 0 || m.degree() != 1 {
                    return None;
                }
                let k = m.exponents.iter().position(|&g| g == 1)?;
                a[(i, k)] += m.coeff;
            }
        }
        Some(a)
    }
}

/// Per-variable scale factors and the autonomization constant.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleMap {
    y: Vec<f64>,
    tau: f64,
}

impl ScaleMap {
    pub fn new(y: Vec<f64>, tau: f64) -> Result<Self> {
        if let Some(bad) = y.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "scale factors must be positive and finite, got {bad}"
            )));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tau must be positive and finite, got {tau}"
            )));
        }
        Ok(ScaleMap { y, tau })
    }

    /// Unit scales on `n` variables with `tau = 1`.
    pub fn identity(n: usize) -> Self {
        ScaleMap {
            y: vec![1.0; n],
            tau: 1.0,
        }
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn inverse(&self) -> ScaleMap {
        ScaleMap {
            y: self.y.iter().map(|v| 1.0 / v).collect(),
            tau: self.tau,
        }
    }

    /// Original variables to scaled ones, `r = q / Y`.
    pub fn to_scaled(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.y).map(|(v, s)| v / s).collect()
    }

    /// Scaled variables back to original ones, `q = r Y`.
    pub fn from_scaled(&self, r: &[f64]) -> Vec<f64> {
        r.iter().zip(&self.y).map(|(v, s)| v * s).collect()
    }
}

/// Rewrites the field in `r_k = y_k / Y_k`: every monomial of equation `i`
/// is multiplied by `Π_k Y_k^γ_k / Y_i`.
pub fn normalize_variables(sys: &PolynomialODE, scale: &ScaleMap) -> Result<PolynomialODE> {
    if scale.y.len() != sys.n() {
        return Err(Error::dim(format!(
            "{} scale factors for {} variables",
            scale.y.len(),
            sys.n()
        )));
    }
    let equations = sys
        .equations
        .iter()
        .enumerate()
        .map(|(i, eq)| {
            eq.iter()
                .map(|m| {
                    let factor: f64 = m
                        .exponents
                        .iter()
                        .zip(&scale.y)
                        .map(|(&g, &s)| s.powi(g as i32))
                        .product();
                    Monomial {
                        coeff: m.coeff * factor / scale.y[i],
                        ..m.clone()
                    }
                })
                .collect()
        })
        .collect();
    PolynomialODE::new(sys.var_names.clone(), equations)
}

/// Appends `z = τ x` as a state variable with `dz/dx = τ` and substitutes
/// `x = z / τ` in every monomial.
pub fn autonomize(sys: &PolynomialODE, tau: f64) -> Result<PolynomialODE> {
    if tau == 0.0 || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "autonomization constant must be nonzero and finite, got {tau}"
        )));
    }
    let n = sys.n();
    let mut names = sys.var_names.clone();
    names.push(fresh_name(&names, "z"));
    let mut equations: Vec<Vec<Monomial>> = sys
        .equations
        .iter()
        .map(|eq| {
            eq.iter()
                .map(|m| {
                    let mut exponents = m.exponents.clone();
                    exponents.push(m.x_power);
                    Monomial {
                        coeff: m.coeff * tau.powi(-(m.x_power as i32)),
                        exponents,
                        x_power: 0,
                    }
                })
                .collect()
        })
        .collect();
    equations.push(vec![Monomial::new(tau, vec![0; n + 1])]);
    PolynomialODE::new(names, equations)
}

fn fresh_name(taken: &[String], base: &str) -> String {
    if !taken.iter().any(|t| t == base) {
        return base.to_string();
    }
    (1..)
        .map(|i| format!("{base}{i}"))
        .find(|cand| !taken.iter().any(|t| t == cand))
        .expect("unbounded")
}

/// A perturbation contribution `value(param)^order · field`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationGroup {
    pub param: String,
    pub order: u32,
    pub field: PolynomialODE,
}

/// A parsed system file: unperturbed field, parameters and perturbations.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemDefinition {
    params: Vec<(String, f64)>,
    base: PolynomialODE,
    groups: Vec<PerturbationGroup>,
}

impl SystemDefinition {
    pub fn new(
        params: Vec<(String, f64)>,
        base: PolynomialODE,
        groups: Vec<PerturbationGroup>,
    ) -> Result<Self> {
        for g in &groups {
            if g.field.var_names != base.var_names {
                return Err(Error::dim("perturbation defined on different variables"));
            }
            if !params.iter().any(|(p, _)| *p == g.param) {
                return Err(Error::InvalidArgument(format!(
                    "unknown parameter `{}`",
                    g.param
                )));
            }
            if g.order == 0 {
                return Err(Error::InvalidArgument("perturbation order must be ≥ 1".into()));
            }
        }
        Ok(SystemDefinition {
            params,
            base,
            groups,
        })
    }

    /// A system with no perturbation structure.
    pub fn plain(field: PolynomialODE) -> Self {
        SystemDefinition {
            params: Vec::new(),
            base: field,
            groups: Vec::new(),
        }
    }

    pub fn base(&self) -> &PolynomialODE {
        &self.base
    }

    pub fn groups(&self) -> &[PerturbationGroup] {
        &self.groups
    }

    pub fn params(&self) -> &[(String, f64)] {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.base.n()
    }

    pub fn var_names(&self) -> &[String] {
        self.base.var_names()
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|(p, _)| p == name).map(|(_, v)| *v)
    }

    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        match self.params.iter_mut().find(|(p, _)| p == name) {
            Some(slot) => {
                slot.1 = value;
                Ok(())
            }
            None => Err(Error::InvalidArgument(format!("unknown parameter `{name}`"))),
        }
    }

    /// Parameters that drive at least one perturbation group, in order of
    /// first use.
    pub fn sources(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for g in &self.groups {
            if !out.contains(&g.param) {
                out.push(g.param.clone());
            }
        }
        out
    }

    /// `b + Σ value(param)^order · g`.
    pub fn full_field(&self) -> PolynomialODE {
        self.groups.iter().fold(self.base.clone(), |acc, g| {
            let w = self.param(&g.param).expect("validated").powi(g.order as i32);
            acc.add_scaled(w, &g.field).expect("same variables")
        })
    }

    /// Sum of the perturbation fields of one source at one order, without
    /// the parameter weight.
    pub fn perturbation_field(&self, param: &str, order: u32) -> PolynomialODE {
        self.groups
            .iter()
            .filter(|g| g.param == param && g.order == order)
            .fold(
                PolynomialODE::zero(self.base.var_names.clone()).expect("nonempty"),
                |acc, g| acc.add_scaled(1.0, &g.field).expect("same variables"),
            )
    }

    pub fn max_order(&self) -> u32 {
        self.groups.iter().map(|g| g.order).max().unwrap_or(0)
    }

    pub fn is_autonomous(&self) -> bool {
        self.base.is_autonomous() && self.groups.iter().all(|g| g.field.is_autonomous())
    }

    /// Same structure with every field rewritten in scaled variables.
    pub fn normalized(&self, scale: &ScaleMap) -> Result<SystemDefinition> {
        let base = normalize_variables(&self.base, scale)?;
        let groups = self
            .groups
            .iter()
            .map(|g| {
                Ok(PerturbationGroup {
                    field: normalize_variables(&g.field, scale)?,
                    ..g.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SystemDefinition {
            params: self.params.clone(),
            base,
            groups,
        })
    }

    /// Autonomizes every field; `dz/dx = τ` lives in the unperturbed part.
    pub fn autonomized(&self, tau: f64) -> Result<SystemDefinition> {
        let base = autonomize(&self.base, tau)?;
        let groups = self
            .groups
            .iter()
            .map(|g| {
                let mut field = autonomize(&g.field, tau)?;
                let last = field.equations.len() - 1;
                field.equations[last].clear();
                Ok(PerturbationGroup {
                    field,
                    ..g.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SystemDefinition {
            params: self.params.clone(),
            base,
            groups,
        })
    }

    /// Serializes back to the text format.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "var {}", self.var_names().join(" "));
        for (name, value) in &self.params {
            let _ = writeln!(out, "param {name} {value:?}");
        }
        write_equations(&mut out, &self.base);
        for g in &self.groups {
            if g.order == 1 {
                let _ = writeln!(out, "perturb {}", g.param);
            } else {
                let _ = writeln!(out, "perturb {} {}", g.param, g.order);
            }
            write_equations(&mut out, &g.field);
        }
        out
    }
}

fn write_equations(out: &mut String, field: &PolynomialODE) {
    for (name, eq) in field.var_names.iter().zip(&field.equations) {
        if eq.is_empty() {
            continue;
        }
        let terms: Vec<String> = eq
            .iter()
            .map(|m| format_monomial(m, &field.var_names))
            .collect();
        let _ = writeln!(out, "d{name} = {}", terms.join(" ; "));
    }
}

fn format_monomial(m: &Monomial, names: &[String]) -> String {
    let mut s = format!("{:?}", m.coeff);
    for (name, &g) in names.iter().zip(&m.exponents) {
        push_factor(&mut s, name, g);
    }
    push_factor(&mut s, INDEPENDENT_VAR, m.x_power);
    s
}

fn push_factor(s: &mut String, name: &str, power: u32) {
    match power {
        0 => {}
        1 => {
            let _ = write!(s, " {name}");
        }
        p => {
            let _ = write!(s, " {name}^{p}");
        }
    }
}

impl fmt::Display for SystemDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

impl fmt::Display for PolynomialODE {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&SystemDefinition::plain(self.clone()).serialize())
    }
}

/// Parses a system file and returns the assembled field.
pub fn parse_system(text: &str) -> Result<PolynomialODE, ParseError> {
    parse_definition(text).map(|d| d.full_field())
}

#[derive(Clone, Copy)]
struct Token<'a> {
    text: &'a str,
    col: usize,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in line.char_indices() {
        let is_sep = ch.is_whitespace() || ch == ';' || ch == '=';
        if is_sep {
            if let Some(s) = start.take() {
                out.push(Token {
                    text: &line[s..i],
                    col: s + 1,
                });
            }
            if ch == ';' || ch == '=' {
                out.push(Token {
                    text: &line[i..i + ch.len_utf8()],
                    col: i + 1,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token {
            text: &line[s..],
            col: s + 1,
        });
    }
    out
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// `None` for the unperturbed part, else `(param, order)`, with its equations.
type Section = (Option<(String, u32)>, Vec<Vec<Monomial>>);

/// Parses a system file, keeping parameters and perturbation groups.
pub fn parse_definition(text: &str) -> Result<SystemDefinition, ParseError> {
    let mut vars: Vec<String> = Vec::new();
    let mut params: Vec<(String, f64)> = Vec::new();
    let mut sections: BTreeMap<usize, Section> = BTreeMap::new();
    let mut current = 0usize;
    sections.insert(0, (None, Vec::new()));

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let content = raw.split('#').next().unwrap_or("");
        let toks = tokenize(content);
        let Some(first) = toks.first() else { continue };
        let err = |col: usize, kind: ParseErrorKind| ParseError {
            line: line_no,
            col,
            kind,
        };
        match first.text {
            "var" => {
                if toks.len() < 2 {
                    return Err(err(first.col, ParseErrorKind::Syntax("`var` needs names".into())));
                }
                for t in &toks[1..] {
                    if !is_identifier(t.text) {
                        return Err(err(t.col, ParseErrorKind::Syntax(format!("bad name `{}`", t.text))));
                    }
                    if t.text == INDEPENDENT_VAR
                        || vars.iter().any(|v| v == t.text)
                        || params.iter().any(|(p, _)| p == t.text)
                    {
                        return Err(err(t.col, ParseErrorKind::Duplicate(t.text.into())));
                    }
                    vars.push(t.text.to_string());
                }
            }
            "param" => {
                let rest: Vec<&Token> = toks[1..].iter().filter(|t| t.text != "=").collect();
                if rest.len() != 2 {
                    return Err(err(first.col, ParseErrorKind::Syntax("expected `param NAME VALUE`".into())));
                }
                let (name, value) = (rest[0], rest[1]);
                if !is_identifier(name.text) {
                    return Err(err(name.col, ParseErrorKind::Syntax(format!("bad name `{}`", name.text))));
                }
                if vars.iter().any(|v| v == name.text)
                    || params.iter().any(|(p, _)| p == name.text)
                    || name.text == INDEPENDENT_VAR
                {
                    return Err(err(name.col, ParseErrorKind::Duplicate(name.text.into())));
                }
                let v = parse_coeff(value.text)
                    .ok_or_else(|| err(value.col, ParseErrorKind::BadCoefficient(value.text.into())))?;
                params.push((name.text.to_string(), v));
            }
            "perturb" => {
                if toks.len() < 2 || toks.len() > 3 {
                    return Err(err(first.col, ParseErrorKind::Syntax("expected `perturb NAME [ORDER]`".into())));
                }
                let name = toks[1];
                if !params.iter().any(|(p, _)| p == name.text) {
                    return Err(err(name.col, ParseErrorKind::UnknownParameter(name.text.into())));
                }
                let order = match toks.get(2) {
                    Some(t) => match t.text.parse::<u32>() {
                        Ok(k) if k >= 1 => k,
                        _ => {
                            return Err(err(t.col, ParseErrorKind::Syntax(format!(
                                "perturbation order `{}` must be a positive integer",
                                t.text
                            ))))
                        }
                    },
                    None => 1,
                };
                current = sections.len();
                sections.insert(current, (Some((name.text.to_string(), order)), Vec::new()));
            }
            word if word.starts_with('d') => {
                if vars.is_empty() {
                    return Err(err(first.col, ParseErrorKind::MissingVars));
                }
                let (name_tok, eq_idx) = if word == "d" {
                    match toks.get(1) {
                        Some(t) => (Token { text: t.text, col: t.col }, 2),
                        None => return Err(err(first.col, ParseErrorKind::Syntax("missing variable after `d`".into()))),
                    }
                } else {
                    (Token { text: &word[1..], col: first.col + 1 }, 1)
                };
                let Some(target) = vars.iter().position(|v| v == name_tok.text) else {
                    return Err(err(name_tok.col, ParseErrorKind::UnknownVariable(name_tok.text.into())));
                };
                match toks.get(eq_idx) {
                    Some(t) if t.text == "=" => {}
                    Some(t) => return Err(err(t.col, ParseErrorKind::Syntax(format!("expected `=`, found `{}`", t.text)))),
                    None => return Err(err(content.len() + 1, ParseErrorKind::Syntax("expected `=`".into()))),
                }
                let monos = parse_monomials(&toks[eq_idx + 1..], &vars, line_no)?;
                let eqs = &mut sections.get_mut(&current).expect("section").1;
                if eqs.len() < vars.len() {
                    eqs.resize(vars.len(), Vec::new());
                }
                eqs[target].extend(monos);
            }
            other => {
                return Err(err(first.col, ParseErrorKind::Syntax(format!("unexpected `{other}`"))));
            }
        }
    }

    if vars.is_empty() {
        return Err(ParseError {
            line: text.lines().count().max(1),
            col: 1,
            kind: ParseErrorKind::MissingVars,
        });
    }
    let n = vars.len();
    let build = |mut eqs: Vec<Vec<Monomial>>| {
        eqs.resize(n, Vec::new());
        for m in eqs.iter_mut().flatten() {
            m.exponents.resize(n, 0);
        }
        PolynomialODE::new(vars.clone(), eqs).expect("parser produces consistent fields")
    };
    let mut base = None;
    let mut groups = Vec::new();
    for (_, (key, eqs)) in sections {
        match key {
            None => base = Some(build(eqs)),
            Some((param, order)) => groups.push(PerturbationGroup {
                param,
                order,
                field: build(eqs),
            }),
        }
    }
    Ok(SystemDefinition {
        params,
        base: base.expect("base section"),
        groups,
    })
}

fn parse_coeff(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_monomials(
    toks: &[Token<'_>],
    vars: &[String],
    line: usize,
) -> Result<Vec<Monomial>, ParseError> {
    let err = |col: usize, kind: ParseErrorKind| ParseError { line, col, kind };
    let mut out = Vec::new();
    if toks.is_empty() {
        return Ok(out);
    }
    for group in toks.split(|t| t.text == ";") {
        let Some(head) = group.first() else {
            let col = toks.iter().find(|t| t.text == ";").map_or(1, |t| t.col);
            return Err(err(col, ParseErrorKind::Syntax("empty monomial".into())));
        };
        let coeff =
            parse_coeff(head.text).ok_or_else(|| err(head.col, ParseErrorKind::BadCoefficient(head.text.into())))?;
        let mut mono = Monomial::new(coeff, vec![0; vars.len()]);
        for factor in &group[1..] {
            if factor.text == "=" {
                return Err(err(factor.col, ParseErrorKind::Syntax("unexpected `=`".into())));
            }
            let (name, power) = match factor.text.split_once('^') {
                Some((name, p)) => {
                    let power = p
                        .parse::<u32>()
                        .map_err(|_| err(factor.col + name.len() + 1, ParseErrorKind::BadExponent(p.into())))?;
                    (name, power)
                }
                None => (factor.text, 1),
            };
            if name == INDEPENDENT_VAR {
                mono.x_power += power;
            } else if let Some(k) = vars.iter().position(|v| v == name) {
                mono.exponents[k] += power;
            } else {
                return Err(err(factor.col, ParseErrorKind::UnknownVariable(name.into())));
            }
        }
        out.push(mono);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DUFFING_FLAT: &str = "var q p\ndq = 1 p\ndp = -1 q ; -0.1 q^3\n";
    const VDP: &str = "var q p\nparam eps 0.1\ndq = 1 p\ndp = -1 q\nperturb eps\ndp = 1 p ; -1 q^2 p\n";

    #[test]
    fn duffing_f_array() {
        let sys = parse_system(DUFFING_FLAT).unwrap();
        let f = sys.f_array();
        assert_eq!(sys.nt(), 2);
        assert_eq!(f[0][0], vec![1.0, 0.0, 1.0]);
        assert_eq!(f[1][0], vec![-1.0, 1.0, 0.0]);
        assert_eq!(f[1][1], vec![-0.1, 3.0, 0.0]);
        // unused slot
        assert_eq!(f[0][1], vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn van_der_pol_f_array() {
        let sys = parse_system(VDP).unwrap();
        let f = sys.f_array();
        assert_eq!(f[0][0], vec![1.0, 0.0, 1.0]);
        assert_eq!(f[1][0], vec![-1.0, 1.0, 0.0]);
        assert_eq!(f[1][1], vec![0.1, 0.0, 1.0]);
        assert_eq!(f[1][2], vec![-0.1, 2.0, 1.0]);
    }

    #[test]
    fn empty_derivative_line() {
        let sys = parse_system("var a b\nda =\ndb = 2 a\n").unwrap();
        assert!(sys.equation(0).is_empty());
        assert_eq!(sys.equation(1).len(), 1);
    }

    #[test]
    fn comments_and_spacing() {
        let sys = parse_system("# header\nvar q p   # trailing\n\nd q = 1 p;2 q^2\n").unwrap();
        assert_eq!(sys.equation(0).len(), 2);
        assert_eq!(sys.equation(0)[1].exponents, vec![2, 0]);
    }

    #[test]
    fn parse_errors_carry_position() {
        let e = parse_system("var q p\ndq = 1 r\n").unwrap_err();
        assert_eq!((e.line, e.col), (2, 8));
        assert!(matches!(e.kind, ParseErrorKind::UnknownVariable(_)));

        let e = parse_system("var q\ndq = 1 q^-1\n").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::BadExponent(_)));
        let e = parse_system("var q\ndq = 1 q^1.5\n").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::BadExponent(_)));
        let e = parse_system("var q\ndq = abc q\n").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::BadCoefficient(_)));
        let e = parse_system("var q\ndz = 1 q\n").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::UnknownVariable(_)));
        let e = parse_system("var q\nfoo bar\n").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::Syntax(_)));
        let e = parse_system("dq = 1\n").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::MissingVars));
        let e = parse_system("var q\nperturb eps\n").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::UnknownParameter(_)));
        let e = parse_system("var q q\n").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::Duplicate(_)));
    }

    #[test]
    fn serialize_round_trip() {
        for text in [DUFFING_FLAT, VDP, "var y\nparam a 0.1\nparam b 0.1414\ndy = 1 y\nperturb a\ndy = 1 y^2\nperturb b 2\ndy = 1 y^3\n", "var y\ndy = 1 x^2 ; 0.3 y x\n"] {
            let d = parse_definition(text).unwrap();
            let again = parse_definition(&d.serialize()).unwrap();
            assert_eq!(d, again);
        }
    }

    #[test]
    fn evaluate_rhs_examples() {
        let duffing = parse_system(DUFFING_FLAT).unwrap();
        assert_eq!(duffing.evaluate_rhs(&[1.0, 0.0]), vec![0.0, -1.1]);
        let vdp = parse_system(VDP).unwrap();
        assert_eq!(vdp.evaluate_rhs(&[0.7, 0.0]), vec![0.0, -0.7]);
        let constant = parse_system("var a b\nda = 2\ndb = -3\n").unwrap();
        assert_eq!(constant.evaluate_rhs(&[0.4, -9.0]), vec![2.0, -3.0]);
    }

    #[test]
    fn full_field_applies_parameter_weights() {
        let mut d = parse_definition(VDP).unwrap();
        d.set_param("eps", 0.5).unwrap();
        let f = d.full_field();
        assert_eq!(f.equation(1)[1].coeff, 0.5);
        assert_eq!(f.equation(1)[2].coeff, -0.5);
        assert!(d.set_param("nope", 1.0).is_err());
        assert_eq!(d.sources(), vec!["eps".to_string()]);
    }

    #[test]
    fn normalization_examples() {
        let duffing = parse_system(DUFFING_FLAT).unwrap();
        let y = 3.0;
        let scaled = normalize_variables(&duffing, &ScaleMap::new(vec![y, y], 1.0).unwrap()).unwrap();
        assert_eq!(scaled.equation(0)[0].coeff, 1.0);
        assert_eq!(scaled.equation(1)[0].coeff, -1.0);
        assert!((scaled.equation(1)[1].coeff + 0.1 * y * y).abs() < 1e-15);

        let same = normalize_variables(&duffing, &ScaleMap::identity(2)).unwrap();
        assert_eq!(same, duffing);

        let vdp = parse_system(VDP).unwrap();
        let scaled = normalize_variables(&vdp, &ScaleMap::new(vec![2.0, 2.0], 1.0).unwrap()).unwrap();
        assert!((scaled.equation(1)[2].coeff + 0.1 * 4.0).abs() < 1e-15);
        assert!((scaled.equation(1)[1].coeff - 0.1).abs() < 1e-15);

        assert!(ScaleMap::new(vec![1.0, 0.0], 1.0).is_err());
        assert!(ScaleMap::new(vec![1.0], -1.0).is_err());
    }

    #[test]
    fn autonomize_examples() {
        let sys = parse_system("var y\ndy = 1 x\n").unwrap();
        assert!(!sys.is_autonomous());
        let auto = autonomize(&sys, 1.0).unwrap();
        assert!(auto.is_autonomous());
        assert_eq!(auto.var_names(), &["y".to_string(), "z".to_string()]);
        assert_eq!(auto.equation(0), &[Monomial::new(1.0, vec![0, 1])]);
        assert_eq!(auto.equation(1), &[Monomial::new(1.0, vec![0, 0])]);

        let sys = parse_system("var y\ndy = 1 x^2\n").unwrap();
        let auto = autonomize(&sys, 2.0).unwrap();
        assert_eq!(auto.equation(0), &[Monomial::new(0.25, vec![0, 2])]);
        assert_eq!(auto.equation(1), &[Monomial::new(2.0, vec![0, 0])]);

        let plain = parse_system(DUFFING_FLAT).unwrap();
        let auto = autonomize(&plain, 1.0).unwrap();
        assert_eq!(auto.n(), 3);
        assert_eq!(auto.equation(1)[1].exponents, vec![3, 0, 0]);
        assert!(autonomize(&plain, 0.0).is_err());
    }

    #[test]
    fn linear_matrix_extraction() {
        let sys = parse_system("var a b\nda = 1 b\ndb = -1 a ; 0.5 b\n").unwrap();
        let a = sys.linear_matrix().unwrap();
        assert_eq!(a.row(0), &[0.0, 1.0]);
        assert_eq!(a.row(1), &[-1.0, 0.5]);
        assert!(parse_system(DUFFING_FLAT).unwrap().linear_matrix().is_none());
        assert!(parse_system("var a\nda = 1\n").unwrap().linear_matrix().is_none());
    }

    #[test]
    fn zero_and_repeated_monomials() {
        let sys = parse_system("var a\nda = 0 a ; 1 a^2 ; 2 a^2\n").unwrap();
        assert_eq!(sys.equation(0), &[Monomial::new(3.0, vec![2])]);
    }
}
