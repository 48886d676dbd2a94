//! Polynomial and exponential Diophantine families.
//!
//! A family is a polynomial with integer coefficients whose monomials may
//! carry factors `2^x` for variables `x`, together with a split of its
//! variables into parameters and unknowns. Unknowns range over positive
//! integers unless a search explicitly opts into zero.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops::{Add, Mul, Neg, RangeInclusive, Sub};

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use thiserror::Error;

/// Largest exponent `x` accepted in a `2^x` factor during evaluation.
pub const MAX_EXP2: u64 = 1 << 24;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DiophError {
    #[error("no value for variable {0}")]
    MissingVariable(String),
    #[error("variable {0} is not a parameter")]
    UnknownParameter(String),
    #[error("variable {0} is used but not declared")]
    Undeclared(String),
    #[error("variable {0} is declared twice")]
    DuplicateDeclaration(String),
    #[error("exponent {0} in a 2^x factor is out of range")]
    ExponentOutOfRange(String),
    #[error("expected exactly two parameters (k, N), found {0}")]
    NotTwoParameter(usize),
    #[error("box has {got} ranges for {expected} unknowns")]
    BoxArity { expected: usize, got: usize },
    #[error("box range for {0} is empty or below the domain")]
    BadRange(String),
    #[error("parse error: {0}")]
    Parse(String),
}

/// Variable powers and `2^x` multiplicities of one monomial.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Monomial {
    pub powers: BTreeMap<String, u32>,
    pub exp_factors: BTreeMap<String, u32>,
}

impl Monomial {
    pub fn degree(&self) -> u32 {
        self.powers.values().sum()
    }

    fn mul(&self, other: &Monomial) -> Monomial {
        let mut out = self.clone();
        for (v, p) in &other.powers {
            *out.powers.entry(v.clone()).or_insert(0) += p;
        }
        for (v, m) in &other.exp_factors {
            *out.exp_factors.entry(v.clone()).or_insert(0) += m;
        }
        out
    }

    fn variables(&self) -> impl Iterator<Item = &String> {
        self.powers.keys().chain(self.exp_factors.keys())
    }

    fn renamed(&self, from: &str, to: &str) -> Monomial {
        let swap = |m: &BTreeMap<String, u32>| {
            m.iter()
                .map(|(v, p)| (if v == from { to.to_string() } else { v.clone() }, *p))
                .collect()
        };
        Monomial { powers: swap(&self.powers), exp_factors: swap(&self.exp_factors) }
    }
}

/// A nonzero coefficient times a monomial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    pub coefficient: BigInt,
    pub monomial: Monomial,
}

/// Sum of terms, kept with like terms merged and zero terms dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Polynomial {
    terms: BTreeMap<Monomial, BigInt>,
}

impl Polynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: impl Into<BigInt>) -> Self {
        let mut p = Self::zero();
        p.add_term(Monomial::default(), c.into());
        p
    }

    pub fn var(name: &str) -> Self {
        Self::monomial(name, 1)
    }

    pub fn monomial(name: &str, power: u32) -> Self {
        let mut m = Monomial::default();
        if power > 0 {
            m.powers.insert(name.to_string(), power);
        }
        let mut p = Self::zero();
        p.add_term(m, BigInt::one());
        p
    }

    /// The factor `2^name`.
    pub fn exp2(name: &str) -> Self {
        let mut m = Monomial::default();
        m.exp_factors.insert(name.to_string(), 1);
        let mut p = Self::zero();
        p.add_term(m, BigInt::one());
        p
    }

    pub fn from_terms(terms: impl IntoIterator<Item = Term>) -> Self {
        let mut p = Self::zero();
        for t in terms {
            p.add_term(t.monomial, t.coefficient);
        }
        p
    }

    fn add_term(&mut self, m: Monomial, c: BigInt) {
        if c.is_zero() {
            return;
        }
        let entry = self.terms.entry(m.clone()).or_insert_with(BigInt::zero);
        *entry += c;
        if entry.is_zero() {
            self.terms.remove(&m);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> Vec<Term> {
        self.terms
            .iter()
            .map(|(m, c)| Term { coefficient: c.clone(), monomial: m.clone() })
            .collect()
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    /// Total degree in the polynomial variables; `2^x` factors count zero.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn variables(&self) -> BTreeSet<String> {
        self.terms.keys().flat_map(|m| m.variables().cloned()).collect()
    }

    pub fn scale(&self, c: impl Into<BigInt>) -> Self {
        let c = c.into();
        let mut out = Self::zero();
        for (m, k) in &self.terms {
            out.add_term(m.clone(), k * &c);
        }
        out
    }

    pub fn square(&self) -> Self {
        self * self
    }

    pub fn rename(&self, from: &str, to: &str) -> Self {
        let mut out = Self::zero();
        for (m, c) in &self.terms {
            out.add_term(m.renamed(from, to), c.clone());
        }
        out
    }

    pub fn evaluate(&self, values: &HashMap<String, BigInt>) -> Result<BigInt, DiophError> {
        let mut total = BigInt::zero();
        for (m, c) in &self.terms {
            let mut t = c.clone();
            for (v, p) in &m.powers {
                let x = values.get(v).ok_or_else(|| DiophError::MissingVariable(v.clone()))?;
                t *= x.pow(*p);
            }
            for (v, mult) in &m.exp_factors {
                let x = values.get(v).ok_or_else(|| DiophError::MissingVariable(v.clone()))?;
                t <<= exp_shift(x, *mult)?;
            }
            total += t;
        }
        Ok(total)
    }
}

fn exp_shift(x: &BigInt, mult: u32) -> Result<usize, DiophError> {
    x.to_u64()
        .and_then(|x| x.checked_mul(mult as u64))
        .filter(|&s| s <= MAX_EXP2)
        .map(|s| s as usize)
        .ok_or_else(|| DiophError::ExponentOutOfRange(x.to_string()))
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), -c);
        }
        out
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        let mut out = Polynomial::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &rhs.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        out
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $method:ident) => {
        impl $tr for Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: Polynomial) -> Polynomial {
                (&self).$method(&rhs)
            }
        }
        impl $tr<&Polynomial> for Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: &Polynomial) -> Polynomial {
                (&self).$method(rhs)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

impl Neg for Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        -&self
    }
}

impl fmt::Display for Polynomial {
    /// Human-readable infix form, e.g. `x1*x2 - 2`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        for (i, (m, c)) in self.terms.iter().rev().enumerate() {
            let neg = c.is_negative();
            let abs = c.abs();
            match (i, neg) {
                (0, true) => f.write_str("-")?,
                (0, false) => {}
                (_, true) => f.write_str(" - ")?,
                (_, false) => f.write_str(" + ")?,
            }
            let mut factors: Vec<String> = Vec::new();
            for (v, p) in &m.powers {
                factors.push(if *p == 1 { v.clone() } else { format!("{v}^{p}") });
            }
            for (v, k) in &m.exp_factors {
                factors.push(if *k == 1 { format!("2^{v}") } else { format!("2^({k}*{v})") });
            }
            if factors.is_empty() || !abs.is_one() {
                factors.insert(0, abs.to_string());
            }
            f.write_str(&factors.join("*"))?;
        }
        Ok(())
    }
}

/// A polynomial equated to zero, with its variables split into parameters
/// and unknowns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquationFamily {
    poly: Polynomial,
    params: Vec<String>,
    unknowns: Vec<String>,
}

impl EquationFamily {
    pub fn new(poly: Polynomial, params: Vec<String>, unknowns: Vec<String>) -> Result<Self, DiophError> {
        let mut seen = BTreeSet::new();
        for v in params.iter().chain(&unknowns) {
            if !seen.insert(v.clone()) {
                return Err(DiophError::DuplicateDeclaration(v.clone()));
            }
        }
        if let Some(v) = poly.variables().into_iter().find(|v| !seen.contains(v)) {
            return Err(DiophError::Undeclared(v));
        }
        Ok(Self { poly, params, unknowns })
    }

    /// Builds from string slices; handy for literals.
    pub fn with(poly: Polynomial, params: &[&str], unknowns: &[&str]) -> Result<Self, DiophError> {
        Self::new(
            poly,
            params.iter().map(|s| s.to_string()).collect(),
            unknowns.iter().map(|s| s.to_string()).collect(),
        )
    }

    pub fn poly(&self) -> &Polynomial {
        &self.poly
    }

    pub fn terms(&self) -> Vec<Term> {
        self.poly.terms()
    }

    pub fn params(&self) -> &[String] {
        &self.params
    }

    pub fn unknowns(&self) -> &[String] {
        &self.unknowns
    }

    pub fn degree(&self) -> u32 {
        self.poly.degree()
    }

    pub fn evaluate(&self, assignment: &HashMap<String, BigInt>) -> Result<BigInt, DiophError> {
        for v in self.params.iter().chain(&self.unknowns) {
            if !assignment.contains_key(v) {
                return Err(DiophError::MissingVariable(v.clone()));
            }
        }
        self.poly.evaluate(assignment)
    }

    /// Evaluates with parameters and unknowns given positionally.
    pub fn evaluate_at(&self, params: &[u64], unknowns: &[u64]) -> Result<BigInt, DiophError> {
        self.evaluate(&self.assignment(params, unknowns))
    }

    pub fn assignment(&self, params: &[u64], unknowns: &[u64]) -> HashMap<String, BigInt> {
        self.params
            .iter()
            .zip(params)
            .chain(self.unknowns.iter().zip(unknowns))
            .map(|(v, x)| (v.clone(), BigInt::from(*x)))
            .collect()
    }

    /// Text form: declaration lines followed by the s-expression.
    pub fn to_sexpr(&self) -> String {
        format!(
            "params: {}\nunknowns: {}\n{}\n",
            self.params.join(" "),
            self.unknowns.join(" "),
            poly_to_sexpr(&self.poly)
        )
    }

    pub fn parse_sexpr(text: &str) -> Result<Self, DiophError> {
        let mut params = None;
        let mut unknowns = None;
        let mut body = String::new();
        for line in text.lines() {
            let t = line.trim();
            if let Some(rest) = t.strip_prefix("params:") {
                params = Some(rest.split_whitespace().map(str::to_string).collect());
            } else if let Some(rest) = t.strip_prefix("unknowns:") {
                unknowns = Some(rest.split_whitespace().map(str::to_string).collect());
            } else if !t.starts_with(';') {
                body.push_str(t);
                body.push(' ');
            }
        }
        let params = params.ok_or_else(|| DiophError::Parse("missing `params:` line".into()))?;
        let unknowns = unknowns.ok_or_else(|| DiophError::Parse("missing `unknowns:` line".into()))?;
        Self::new(parse_poly_sexpr(&body)?, params, unknowns)
    }
}

impl fmt::Display for EquationFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = 0", self.poly)
    }
}

pub fn poly_to_sexpr(p: &Polynomial) -> String {
    let mut out = String::from("(+");
    for t in p.terms() {
        out.push_str(&format!(" (* {}", t.coefficient));
        for (v, e) in &t.monomial.powers {
            out.push_str(&format!(" (^ {v} {e})"));
        }
        for (v, m) in &t.monomial.exp_factors {
            for _ in 0..*m {
                out.push_str(&format!(" (exp2 {v})"));
            }
        }
        out.push(')');
    }
    out.push(')');
    out
}

#[derive(Debug)]
enum Sexpr {
    Atom(String),
    List(Vec<Sexpr>),
}

fn tokenize(s: &str) -> Vec<String> {
    s.replace('(', " ( ").replace(')', " ) ").split_whitespace().map(str::to_string).collect()
}

fn read_sexpr(tokens: &[String], pos: &mut usize) -> Result<Sexpr, DiophError> {
    let tok = tokens.get(*pos).ok_or_else(|| DiophError::Parse("unexpected end of input".into()))?;
    *pos += 1;
    match tok.as_str() {
        "(" => {
            let mut items = Vec::new();
            loop {
                match tokens.get(*pos).map(String::as_str) {
                    Some(")") => {
                        *pos += 1;
                        return Ok(Sexpr::List(items));
                    }
                    Some(_) => items.push(read_sexpr(tokens, pos)?),
                    None => return Err(DiophError::Parse("unbalanced parentheses".into())),
                }
            }
        }
        ")" => Err(DiophError::Parse("unexpected `)`".into())),
        atom => Ok(Sexpr::Atom(atom.to_string())),
    }
}

pub fn parse_poly_sexpr(text: &str) -> Result<Polynomial, DiophError> {
    let tokens = tokenize(text);
    let mut pos = 0;
    let expr = read_sexpr(&tokens, &mut pos)?;
    if pos != tokens.len() {
        return Err(DiophError::Parse("trailing input after expression".into()));
    }
    sexpr_poly(&expr)
}

fn sexpr_poly(e: &Sexpr) -> Result<Polynomial, DiophError> {
    let bad = |what: &str| DiophError::Parse(what.to_string());
    match e {
        Sexpr::Atom(a) => match a.parse::<BigInt>() {
            Ok(c) => Ok(Polynomial::constant(c)),
            Err(_) => Ok(Polynomial::var(a)),
        },
        Sexpr::List(items) => {
            let (head, args) = items.split_first().ok_or_else(|| bad("empty list"))?;
            let Sexpr::Atom(op) = head else {
                return Err(bad("operator must be an atom"));
            };
            match op.as_str() {
                "+" => args.iter().try_fold(Polynomial::zero(), |acc, a| Ok(acc + sexpr_poly(a)?)),
                "*" => args.iter().try_fold(Polynomial::constant(1), |acc, a| Ok(acc * sexpr_poly(a)?)),
                "-" => match args {
                    [only] => Ok(-sexpr_poly(only)?),
                    [first, rest @ ..] => {
                        rest.iter().try_fold(sexpr_poly(first)?, |acc, a| Ok(acc - sexpr_poly(a)?))
                    }
                    [] => Err(bad("`-` needs arguments")),
                },
                "^" => match args {
                    [base, Sexpr::Atom(exp)] => {
                        let e: u32 = exp.parse().map_err(|_| bad("exponent must be a nonnegative integer"))?;
                        let b = sexpr_poly(base)?;
                        Ok((0..e).fold(Polynomial::constant(1), |acc, _| acc * &b))
                    }
                    _ => Err(bad("`^` takes a base and an integer exponent")),
                },
                "exp2" => match args {
                    [Sexpr::Atom(v)] if v.parse::<BigInt>().is_err() => Ok(Polynomial::exp2(v)),
                    _ => Err(bad("`exp2` takes one variable")),
                },
                other => Err(DiophError::Parse(format!("unknown operator {other:?}"))),
            }
        }
    }
}

/// Value domain for unknowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Domain {
    #[default]
    Positive,
    /// Admit zero as well.
    Natural,
}

impl Domain {
    pub fn min(self) -> u64 {
        match self {
            Domain::Positive => 1,
            Domain::Natural => 0,
        }
    }
}

/// Inclusive search range per unknown, in the family's unknown order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchBox {
    pub ranges: Vec<RangeInclusive<u64>>,
    pub domain: Domain,
}

impl SearchBox {
    pub fn new(ranges: Vec<RangeInclusive<u64>>) -> Self {
        Self { ranges, domain: Domain::Positive }
    }

    /// `[1, hi]` for each of `n` unknowns.
    pub fn cube(n: usize, hi: u64) -> Self {
        Self::new(vec![1..=hi; n])
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn volume(&self) -> u128 {
        self.ranges.iter().map(|r| (r.end() + 1).saturating_sub(*r.start()) as u128).product()
    }

    fn validate(&self, unknowns: &[String]) -> Result<(), DiophError> {
        if self.ranges.len() != unknowns.len() {
            return Err(DiophError::BoxArity { expected: unknowns.len(), got: self.ranges.len() });
        }
        for (r, v) in self.ranges.iter().zip(unknowns) {
            if r.is_empty() || *r.start() < self.domain.min() {
                return Err(DiophError::BadRange(v.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolutionReport {
    /// Unknown values in unknown order, lexicographically sorted.
    pub solutions: Vec<Vec<u64>>,
    pub count: usize,
    /// The whole box was searched.
    pub exhausted: bool,
}

impl SolutionReport {
    fn complete(mut solutions: Vec<Vec<u64>>) -> Self {
        solutions.sort();
        Self { count: solutions.len(), solutions, exhausted: true }
    }
}

/// Coefficient, power factors and `2^x` factors, all by slot.
type SlotTerm = (BigInt, Vec<(usize, u32)>, Vec<(usize, u32)>);

/// Slot-indexed form of a polynomial for repeated evaluation.
#[derive(Debug, Clone)]
struct CompiledPoly {
    terms: Vec<SlotTerm>,
    slots: Vec<usize>,
}

impl CompiledPoly {
    fn new(poly: &Polynomial, order: &[String]) -> Self {
        let index: HashMap<&str, usize> = order.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
        let slot = |v: &String| index[v.as_str()];
        let terms: Vec<_> = poly
            .terms
            .iter()
            .map(|(m, c)| {
                (
                    c.clone(),
                    m.powers.iter().map(|(v, p)| (slot(v), *p)).collect(),
                    m.exp_factors.iter().map(|(v, k)| (slot(v), *k)).collect(),
                )
            })
            .collect();
        let mut slots: Vec<usize> = poly.variables().iter().map(slot).collect();
        slots.sort_unstable();
        Self { terms, slots }
    }

    fn term_value(coef: &BigInt, pows: &[(usize, u32)], exps: &[(usize, u32)], vals: &[u64], skip: Option<usize>) -> Option<BigInt> {
        let mut t = coef.clone();
        for &(s, p) in pows {
            if Some(s) == skip {
                continue;
            }
            t *= BigInt::from(vals[s]).pow(p);
        }
        for &(s, k) in exps {
            let shift = vals[s].checked_mul(k as u64).filter(|&x| x <= MAX_EXP2)?;
            t <<= shift as usize;
        }
        Some(t)
    }

    /// `None` when an exponent is out of range.
    fn eval(&self, vals: &[u64]) -> Option<BigInt> {
        let mut total = BigInt::zero();
        for (c, pows, exps) in &self.terms {
            total += Self::term_value(c, pows, exps, vals, None)?;
        }
        Some(total)
    }

    /// True when `slot` occurs only to the first power and never in `2^x`.
    fn linear_in(&self, slot: usize) -> bool {
        self.terms.iter().all(|(_, pows, exps)| {
            exps.iter().all(|&(s, _)| s != slot) && pows.iter().all(|&(s, p)| s != slot || p == 1)
        })
    }

    /// Splits into `coef * x + rest` for a linear slot, evaluated at `vals`.
    fn linear_parts(&self, slot: usize, vals: &[u64]) -> Option<(BigInt, BigInt)> {
        let mut coef = BigInt::zero();
        let mut rest = BigInt::zero();
        for (c, pows, exps) in &self.terms {
            if pows.iter().any(|&(s, _)| s == slot) {
                coef += Self::term_value(c, pows, exps, vals, Some(slot))?;
            } else {
                rest += Self::term_value(c, pows, exps, vals, None)?;
            }
        }
        Some((coef, rest))
    }
}

fn param_slots(family: &EquationFamily, params: &[u64]) -> Result<Vec<u64>, DiophError> {
    if params.len() != family.params.len() {
        return Err(DiophError::MissingVariable(
            family.params.get(params.len()).cloned().unwrap_or_else(|| "<extra parameter>".into()),
        ));
    }
    Ok(params.to_vec())
}

/// Every point of `bx` at which the instantiated family vanishes, by plain
/// enumeration. Parallel over the leading unknown; results are sorted.
pub fn solve_in_box(family: &EquationFamily, params: &[u64], bx: &SearchBox) -> Result<SolutionReport, DiophError> {
    bx.validate(&family.unknowns)?;
    let mut vals = param_slots(family, params)?;
    let order: Vec<String> = family.params.iter().chain(&family.unknowns).cloned().collect();
    let compiled = CompiledPoly::new(&family.poly, &order);
    let np = family.params.len();
    let m = family.unknowns.len();
    if m == 0 {
        let hit = compiled.eval(&vals).is_some_and(|v| v.is_zero());
        return Ok(SolutionReport::complete(if hit { vec![vec![]] } else { vec![] }));
    }
    vals.resize(np + m, 0);
    let lead: Vec<u64> = bx.ranges[0].clone().collect();
    let chunks: Vec<Vec<Vec<u64>>> = lead
        .par_iter()
        .map(|&x0| {
            let mut local = vals.clone();
            local[np] = x0;
            let mut found = Vec::new();
            odometer(&compiled, &bx.ranges, np, 1, &mut local, &mut found);
            found
        })
        .collect();
    Ok(SolutionReport::complete(chunks.into_iter().flatten().collect()))
}

fn odometer(c: &CompiledPoly, ranges: &[RangeInclusive<u64>], np: usize, depth: usize, vals: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
    if depth == ranges.len() {
        if c.eval(vals).is_some_and(|v| v.is_zero()) {
            out.push(vals[np..].to_vec());
        }
        return;
    }
    for x in ranges[depth].clone() {
        vals[np + depth] = x;
        odometer(c, ranges, np, depth + 1, vals, out);
    }
}

#[derive(Debug, Clone)]
pub struct SolvableRow {
    pub params: Vec<u64>,
    pub count: usize,
    pub exhausted: bool,
}

impl SolvableRow {
    pub fn solvable(&self) -> bool {
        self.count > 0
    }

    pub fn csv_row(&self) -> String {
        let ps: Vec<String> = self.params.iter().map(u64::to_string).collect();
        format!("{},{},{},{}", ps.join(","), self.solvable(), self.count, self.exhausted)
    }
}

/// One row per parameter tuple in `param_ranges` (lexicographic order).
pub fn solvable_table(
    family: &EquationFamily,
    param_ranges: &[RangeInclusive<u64>],
    bx: &SearchBox,
) -> Result<Vec<SolvableRow>, DiophError> {
    if param_ranges.len() != family.params.len() {
        return Err(DiophError::BoxArity { expected: family.params.len(), got: param_ranges.len() });
    }
    let mut rows = Vec::new();
    let mut tuple: Vec<u64> = param_ranges.iter().map(|r| *r.start()).collect();
    if param_ranges.iter().any(|r| r.is_empty()) {
        return Ok(rows);
    }
    loop {
        let rep = solve_in_box(family, &tuple, bx)?;
        rows.push(SolvableRow { params: tuple.clone(), count: rep.count, exhausted: rep.exhausted });
        // advance the last coordinate fastest
        let mut i = tuple.len();
        loop {
            if i == 0 {
                return Ok(rows);
            }
            i -= 1;
            if tuple[i] < *param_ranges[i].end() {
                tuple[i] += 1;
                for (j, t) in tuple.iter_mut().enumerate().skip(i + 1) {
                    *t = *param_ranges[j].start();
                }
                break;
            }
        }
    }
}

/// Parameter tuples with at least one boxed solution.
pub fn solvable_set(
    family: &EquationFamily,
    param_ranges: &[RangeInclusive<u64>],
    bx: &SearchBox,
) -> Result<BTreeSet<Vec<u64>>, DiophError> {
    Ok(solvable_table(family, param_ranges, bx)?
        .into_iter()
        .filter(SolvableRow::solvable)
        .map(|r| r.params)
        .collect())
}

/// Turns parameter `which` into the unknown `x0`, placed first.
pub fn promote_parameter(family: &EquationFamily, which: &str) -> Result<EquationFamily, DiophError> {
    if !family.params.iter().any(|p| p == which) {
        return Err(DiophError::UnknownParameter(which.to_string()));
    }
    const FRESH: &str = "x0";
    if which != FRESH && family.params.iter().chain(&family.unknowns).any(|v| v == FRESH) {
        return Err(DiophError::DuplicateDeclaration(FRESH.to_string()));
    }
    let params = family.params.iter().filter(|p| *p != which).cloned().collect();
    let mut unknowns = vec![FRESH.to_string()];
    unknowns.extend(family.unknowns.iter().cloned());
    EquationFamily::new(family.poly.rename(which, FRESH), params, unknowns)
}

/// `x0 * (1 - D^2)` with the second parameter promoted to `x0`. Over
/// positive arguments its positive values are exactly the solvable
/// second-parameter values at each fixed first parameter.
pub fn value_set_polynomial(family: &EquationFamily) -> Result<EquationFamily, DiophError> {
    if family.params.len() != 2 {
        return Err(DiophError::NotTwoParameter(family.params.len()));
    }
    let promoted = promote_parameter(family, &family.params[1])?;
    let d = promoted.poly();
    let w = Polynomial::var("x0") * (Polynomial::constant(1) - d.square());
    EquationFamily::new(w, promoted.params, promoted.unknowns)
}

/// Positive values taken by `w` (one remaining parameter `k`) over the box.
pub fn positive_values(w: &EquationFamily, k: u64, bx: &SearchBox) -> Result<BTreeSet<BigInt>, DiophError> {
    bx.validate(&w.unknowns)?;
    let vals = param_slots(w, &[k])?;
    let order: Vec<String> = w.params.iter().chain(&w.unknowns).cloned().collect();
    let compiled = CompiledPoly::new(&w.poly, &order);
    let m = w.unknowns.len();
    let mut found = BTreeSet::new();
    let mut cur = vals;
    cur.resize(1 + m, 0);
    collect_positive(&compiled, &bx.ranges, 0, &mut cur, &mut found);
    Ok(found)
}

fn collect_positive(c: &CompiledPoly, ranges: &[RangeInclusive<u64>], depth: usize, vals: &mut Vec<u64>, out: &mut BTreeSet<BigInt>) {
    if depth == ranges.len() {
        if let Some(v) = c.eval(vals) {
            if v.is_positive() {
                out.insert(v);
            }
        }
        return;
    }
    for x in ranges[depth].clone() {
        vals[1 + depth] = x;
        collect_positive(c, ranges, depth + 1, vals, out);
    }
}

/// Conjunction solver: same answer as enumerating the box, but an unknown
/// that is the only unassigned variable of an equation in which it occurs
/// linearly is computed from that equation instead of enumerated.
/// `node_limit` caps the number of enumerated branch values; hitting it
/// yields `exhausted = false`.
pub fn solve_system_in_box(
    equations: &[EquationFamily],
    params: &[u64],
    bx: &SearchBox,
    node_limit: Option<u64>,
) -> Result<SolutionReport, DiophError> {
    let Some(first) = equations.first() else {
        // empty conjunction: every box point
        return Ok(SolutionReport { solutions: vec![], count: 0, exhausted: true });
    };
    let param_names = first.params.clone();
    let unknowns = first.unknowns.clone();
    for e in equations {
        let declared: BTreeSet<&String> = e.params.iter().chain(&e.unknowns).collect();
        for v in e.poly.variables() {
            if !param_names.contains(&v) && !unknowns.contains(&v) {
                return Err(DiophError::Undeclared(v));
            }
            debug_assert!(declared.contains(&v));
        }
    }
    bx.validate(&unknowns)?;
    if params.len() != param_names.len() {
        return Err(DiophError::BoxArity { expected: param_names.len(), got: params.len() });
    }
    let order: Vec<String> = param_names.iter().chain(&unknowns).cloned().collect();
    let compiled: Vec<CompiledPoly> = equations.iter().map(|e| CompiledPoly::new(&e.poly, &order)).collect();
    let np = param_names.len();
    let mut state = Search {
        eqs: &compiled,
        ranges: &bx.ranges,
        np,
        nodes: 0,
        limit: node_limit,
        aborted: false,
        found: Vec::new(),
    };
    let mut vals = params.to_vec();
    vals.resize(order.len(), 0);
    let mut assigned = vec![true; np];
    assigned.resize(order.len(), false);
    state.dfs(&mut vals, &mut assigned);
    let exhausted = !state.aborted;
    let mut rep = SolutionReport::complete(state.found);
    rep.exhausted = exhausted;
    Ok(rep)
}

struct Search<'a> {
    eqs: &'a [CompiledPoly],
    ranges: &'a [RangeInclusive<u64>],
    np: usize,
    nodes: u64,
    limit: Option<u64>,
    aborted: bool,
    found: Vec<Vec<u64>>,
}

impl Search<'_> {
    /// Assigns forced values; returns the slots it set, or `None` on conflict.
    fn propagate(&self, vals: &mut [u64], assigned: &mut [bool]) -> Option<Vec<usize>> {
        let mut set = Vec::new();
        let mut progress = true;
        let fail = |set: &Vec<usize>, assigned: &mut [bool]| {
            for &s in set {
                assigned[s] = false;
            }
        };
        while progress {
            progress = false;
            for eq in self.eqs {
                let mut open = eq.slots.iter().filter(|&&s| !assigned[s]);
                match (open.next(), open.next()) {
                    (None, _) => {
                        if !eq.eval(vals).is_some_and(|v| v.is_zero()) {
                            fail(&set, assigned);
                            return None;
                        }
                    }
                    (Some(&slot), None) if eq.linear_in(slot) => {
                        let Some((coef, rest)) = eq.linear_parts(slot, vals) else {
                            fail(&set, assigned);
                            return None;
                        };
                        if coef.is_zero() {
                            if !rest.is_zero() {
                                fail(&set, assigned);
                                return None;
                            }
                            continue;
                        }
                        let (q, r) = (-rest).div_rem(&coef);
                        let range = &self.ranges[slot - self.np];
                        let v = q.to_u64().filter(|v| r.is_zero() && range.contains(v));
                        match v {
                            Some(v) => {
                                vals[slot] = v;
                                assigned[slot] = true;
                                set.push(slot);
                                progress = true;
                            }
                            None => {
                                fail(&set, assigned);
                                return None;
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
        Some(set)
    }

    fn dfs(&mut self, vals: &mut Vec<u64>, assigned: &mut Vec<bool>) {
        if self.aborted {
            return;
        }
        let Some(set) = self.propagate(vals, assigned) else {
            return;
        };
        match assigned.iter().position(|a| !a) {
            None => {
                // equations with all slots assigned were checked in propagate
                self.found.push(vals[self.np..].to_vec());
            }
            Some(slot) => {
                assigned[slot] = true;
                for x in self.ranges[slot - self.np].clone() {
                    self.nodes += 1;
                    if self.limit.is_some_and(|l| self.nodes > l) {
                        self.aborted = true;
                        break;
                    }
                    vals[slot] = x;
                    self.dfs(vals, assigned);
                    if self.aborted {
                        break;
                    }
                }
                assigned[slot] = false;
            }
        }
        for s in set {
            assigned[s] = false;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(name: &str) -> Polynomial {
        Polynomial::var(name)
    }

    fn c(k: i64) -> Polynomial {
        Polynomial::constant(k)
    }

    fn fam(p: Polynomial, params: &[&str], unknowns: &[&str]) -> EquationFamily {
        EquationFamily::with(p, params, unknowns).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let mult3 = fam(v("a1") - c(3) * v("x1"), &["a1"], &["x1"]);
        assert_eq!(mult3.evaluate_at(&[6], &[2]).unwrap(), BigInt::zero());
        let two = fam(v("x1") * v("x2") - c(2), &[], &["x1", "x2"]);
        assert_eq!(two.evaluate_at(&[], &[1, 2]).unwrap(), BigInt::zero());
        let exp = fam(Polynomial::exp2("x1") - v("x2"), &[], &["x1", "x2"]);
        assert_eq!(exp.evaluate_at(&[], &[3, 8]).unwrap(), BigInt::zero());
        assert_eq!(
            mult3.evaluate(&HashMap::from([("a1".to_string(), BigInt::from(3))])),
            Err(DiophError::MissingVariable("x1".into()))
        );
    }

    #[test]
    fn declarations_checked() {
        assert!(matches!(EquationFamily::with(v("x1") + v("y"), &[], &["x1"]), Err(DiophError::Undeclared(_))));
        assert!(matches!(
            EquationFamily::with(v("x1"), &["x1"], &["x1"]),
            Err(DiophError::DuplicateDeclaration(_))
        ));
    }

    #[test]
    fn solve_examples() {
        let two = fam(v("x1") * v("x2") - c(2), &[], &["x1", "x2"]);
        let rep = solve_in_box(&two, &[], &SearchBox::cube(2, 10)).unwrap();
        assert_eq!(rep.solutions, vec![vec![1, 2], vec![2, 1]]);
        assert!(rep.exhausted);
        let none = fam(c(2) - c(3) * v("x1"), &[], &["x1"]);
        assert_eq!(solve_in_box(&none, &[], &SearchBox::cube(1, 50)).unwrap().count, 0);
        let many = fam(v("x1") * v("x2") - v("x2"), &[], &["x1", "x2"]);
        assert_eq!(solve_in_box(&many, &[], &SearchBox::cube(2, 12)).unwrap().count, 12);
    }

    #[test]
    fn solvable_set_examples() {
        let mult3 = fam(v("a1") - c(3) * v("x1"), &["a1"], &["x1"]);
        let set = solvable_set(&mult3, &[1..=9], &SearchBox::cube(1, 9)).unwrap();
        assert_eq!(set, BTreeSet::from([vec![3], vec![6], vec![9]]));
        let no_unknowns = fam(v("a1") - c(2), &["a1"], &[]);
        assert_eq!(solvable_set(&no_unknowns, &[1..=5], &SearchBox::new(vec![])).unwrap(), BTreeSet::from([vec![2]]));
        let below = fam(v("N") + v("x1") - v("k"), &["k", "N"], &["x1"]);
        assert_eq!(
            solvable_set(&below, &[3..=3, 1..=7], &SearchBox::cube(1, 7)).unwrap(),
            BTreeSet::from([vec![3, 1], vec![3, 2]])
        );
    }

    #[test]
    fn zero_domain_switch() {
        // x1 = 0 is a root only under the natural-number switch
        let zero_root = fam(v("x1") * v("x1") - v("x1"), &[], &["x1"]);
        assert_eq!(solve_in_box(&zero_root, &[], &SearchBox::cube(1, 3)).unwrap().count, 1);
        let nat = SearchBox::new(vec![0..=3]).with_domain(Domain::Natural);
        assert_eq!(solve_in_box(&zero_root, &[], &nat).unwrap().count, 2);
        assert!(solve_in_box(&zero_root, &[], &SearchBox::new(vec![0..=3])).is_err());
    }

    #[test]
    fn promotion() {
        let chi = fam(v("N") + v("x1") - v("k"), &["k", "N"], &["x1"]);
        let promoted = promote_parameter(&chi, "N").unwrap();
        assert_eq!(promoted.params(), ["k"]);
        assert_eq!(promoted.unknowns(), ["x0", "x1"]);
        assert!(matches!(promote_parameter(&chi, "z"), Err(DiophError::UnknownParameter(_))));
        // fixing x0 reproduces the unpromoted instance
        for n in 1..=6 {
            let orig = solve_in_box(&chi, &[5, n], &SearchBox::cube(1, 6)).unwrap();
            let fixed = solve_in_box(&promoted, &[5], &SearchBox::new(vec![n..=n, 1..=6])).unwrap();
            let stripped: Vec<Vec<u64>> = fixed.solutions.iter().map(|s| s[1..].to_vec()).collect();
            assert_eq!(orig.solutions, stripped);
        }
    }

    #[test]
    fn w_polynomial_shape() {
        let d = fam(v("N") + v("x1") - v("k"), &["k", "N"], &["x1"]);
        let w = value_set_polynomial(&d).unwrap();
        let expected = v("x0") * (c(1) - (v("x0") + v("x1") - v("k")).square());
        assert_eq!(w.poly(), &expected);
        assert_eq!(w.degree(), 2 * d.degree() + 1);
        let vals = positive_values(&w, 3, &SearchBox::cube(2, 7)).unwrap();
        assert_eq!(vals, BTreeSet::from([BigInt::from(1), BigInt::from(2)]));
        assert!(positive_values(&w, 1, &SearchBox::cube(2, 7)).unwrap().is_empty());
        assert!(matches!(value_set_polynomial(&fam(v("k"), &["k"], &[])), Err(DiophError::NotTwoParameter(1))));
    }

    #[test]
    fn sexpr_round_trip() {
        let p = c(3) * v("a1") * v("x1").square() - Polynomial::exp2("x2") * Polynomial::exp2("x2") + c(7);
        let f = fam(p, &["a1"], &["x1", "x2"]);
        let text = f.to_sexpr();
        assert!(text.contains("(exp2 x2) (exp2 x2)"));
        assert_eq!(EquationFamily::parse_sexpr(&text).unwrap(), f);
        let z = fam(Polynomial::zero(), &[], &[]);
        assert_eq!(EquationFamily::parse_sexpr(&z.to_sexpr()).unwrap(), z);
        assert!(parse_poly_sexpr("(+ (* 1 x1)").is_err());
        assert!(parse_poly_sexpr("(frob x1)").is_err());
    }

    #[test]
    fn display_form() {
        assert_eq!((v("x1") * v("x2") - c(2)).to_string(), "x1*x2 - 2");
        assert_eq!(Polynomial::zero().to_string(), "0");
    }

    #[test]
    fn system_solver_agrees_with_enumeration() {
        // x1 + x2 = a, x2 = 2^x3
        let e1 = fam(v("x1") + v("x2") - v("a"), &["a"], &["x1", "x2", "x3"]);
        let e2 = fam(v("x2") - Polynomial::exp2("x3"), &["a"], &["x1", "x2", "x3"]);
        let combined = fam(e1.poly().square() + e2.poly().square(), &["a"], &["x1", "x2", "x3"]);
        let bx = SearchBox::cube(3, 9);
        for a in 1..=12 {
            let fast = solve_system_in_box(&[e1.clone(), e2.clone()], &[a], &bx, None).unwrap();
            let slow = solve_in_box(&combined, &[a], &bx).unwrap();
            assert_eq!(fast, slow, "a = {a}");
        }
    }

    #[test]
    fn system_solver_node_limit() {
        let e = fam(v("x1") * v("x2") - c(1000), &[], &["x1", "x2"]);
        let rep = solve_system_in_box(&[e], &[], &SearchBox::cube(2, 100), Some(10)).unwrap();
        assert!(!rep.exhausted);
    }
}
