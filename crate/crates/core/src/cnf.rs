//! CNF data model, DIMACS reading/writing and structural edits.
//!
//! Clause identity is positional: two clauses with the same literals are
//! distinct entries and keep their own index. Core labels refer to these
//! indices.

use std::fmt;
use std::ops::Not;

use thiserror::Error;

/// A signed occurrence of a variable.
///
/// Encoded as `2 * (var - 1) + neg`, which is also the solver's internal
/// literal numbering and the literal node index of the clause graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Literal(u32);

impl Literal {
    /// `var` is 1-based.
    pub fn new(var: u32, positive: bool) -> Literal {
        assert!(var >= 1, "variables are 1-based");
        Literal(2 * (var - 1) + u32::from(!positive))
    }

    pub fn positive(var: u32) -> Literal {
        Literal::new(var, true)
    }

    pub fn negative(var: u32) -> Literal {
        Literal::new(var, false)
    }

    /// Panics on 0.
    pub fn from_dimacs(value: i32) -> Literal {
        assert!(value != 0, "0 is the DIMACS clause terminator, not a literal");
        Literal::new(value.unsigned_abs(), value > 0)
    }

    pub fn from_code(code: u32) -> Literal {
        Literal(code)
    }

    #[inline]
    pub fn code(self) -> u32 {
        self.0
    }

    #[inline]
    pub fn var(self) -> u32 {
        (self.0 >> 1) + 1
    }

    /// 0-based variable index.
    #[inline]
    pub fn var_index(self) -> usize {
        (self.0 >> 1) as usize
    }

    #[inline]
    pub fn is_positive(self) -> bool {
        self.0 & 1 == 0
    }

    pub fn to_dimacs(self) -> i32 {
        let v = self.var() as i32;
        if self.is_positive() {
            v
        } else {
            -v
        }
    }
}

impl Not for Literal {
    type Output = Literal;

    #[inline]
    fn not(self) -> Literal {
        Literal(self.0 ^ 1)
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_dimacs())
    }
}

/// A disjunction of literals with no repeated literal.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Clause {
    lits: Vec<Literal>,
}

impl Clause {
    /// Builds a clause, rejecting repeated literals.
    pub fn new(lits: Vec<Literal>) -> Result<Clause, EditError> {
        for (i, l) in lits.iter().enumerate() {
            if lits[..i].contains(l) {
                return Err(EditError::DuplicateLiteral(l.to_dimacs()));
            }
        }
        Ok(Clause { lits })
    }

    /// Builds a clause dropping repeated literals (first occurrence wins).
    /// Returns the clause and whether anything was dropped.
    pub fn dedup(lits: impl IntoIterator<Item = Literal>) -> (Clause, bool) {
        let mut out: Vec<Literal> = Vec::new();
        let mut dropped = false;
        for l in lits {
            if out.contains(&l) {
                dropped = true;
            } else {
                out.push(l);
            }
        }
        (Clause { lits: out }, dropped)
    }

    /// Panics on 0 or repeated literals; meant for literals in code and tests.
    pub fn from_dimacs(values: &[i32]) -> Clause {
        Clause::new(values.iter().map(|&v| Literal::from_dimacs(v)).collect())
            .expect("repeated literal in clause")
    }

    /// The empty clause, unsatisfiable by definition.
    pub fn empty() -> Clause {
        Clause { lits: Vec::new() }
    }

    pub fn literals(&self) -> &[Literal] {
        &self.lits
    }

    pub fn len(&self) -> usize {
        self.lits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lits.is_empty()
    }

    pub fn contains_var(&self, var: u32) -> bool {
        self.lits.iter().any(|l| l.var() == var)
    }

    /// True when the clause holds both polarities of some variable.
    pub fn is_tautology(&self) -> bool {
        self.lits.iter().any(|&l| self.lits.contains(&!l))
    }

    pub fn max_var(&self) -> u32 {
        self.lits.iter().map(|l| l.var()).max().unwrap_or(0)
    }

    /// Literal codes in ascending order; equal for clauses with equal literal sets.
    pub fn key(&self) -> Vec<u32> {
        let mut k: Vec<u32> = self.lits.iter().map(|l| l.code()).collect();
        k.sort_unstable();
        k
    }

    pub fn is_satisfied_by(&self, model: &[bool]) -> bool {
        self.lits.iter().any(|l| model[l.var_index()] == l.is_positive())
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lits {
            write!(f, "{} ", l)?;
        }
        write!(f, "0")
    }
}

/// A formula in conjunctive normal form.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Cnf {
    num_vars: u32,
    clauses: Vec<Clause>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EditError {
    #[error("clause index {index} out of range (formula has {len} clauses)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("variable {var} already occurs in clause {index}")]
    VariableAlreadyInClause { index: usize, var: u32 },
    #[error("variable {var} exceeds num_vars + 1 ({limit})")]
    VariableTooLarge { var: u32, limit: u32 },
    #[error("literal {0} repeated in clause")]
    DuplicateLiteral(i32),
}

impl Cnf {
    /// Panics if a clause mentions a variable above `num_vars`.
    pub fn new(num_vars: u32, clauses: Vec<Clause>) -> Cnf {
        let max = clauses.iter().map(Clause::max_var).max().unwrap_or(0);
        assert!(max <= num_vars, "clause mentions variable {max} > num_vars {num_vars}");
        Cnf { num_vars, clauses }
    }

    /// Builds a formula whose variable count is the largest variable mentioned.
    pub fn from_clauses(clauses: Vec<Clause>) -> Cnf {
        let num_vars = clauses.iter().map(Clause::max_var).max().unwrap_or(0);
        Cnf { num_vars, clauses }
    }

    pub fn from_dimacs_clauses(num_vars: u32, clauses: &[&[i32]]) -> Cnf {
        Cnf::new(num_vars, clauses.iter().map(|c| Clause::from_dimacs(c)).collect())
    }

    pub fn num_vars(&self) -> u32 {
        self.num_vars
    }

    pub fn num_clauses(&self) -> usize {
        self.clauses.len()
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn clause(&self, index: usize) -> &Clause {
        &self.clauses[index]
    }

    pub fn num_literals(&self) -> usize {
        self.clauses.iter().map(Clause::len).sum()
    }

    /// Sub-formula made of the given clause indices, in the given order,
    /// keeping the variable count.
    pub fn subformula(&self, indices: &[usize]) -> Cnf {
        Cnf {
            num_vars: self.num_vars,
            clauses: indices.iter().map(|&i| self.clauses[i].clone()).collect(),
        }
    }

    pub fn with_num_vars(mut self, num_vars: u32) -> Cnf {
        assert!(num_vars >= self.num_vars);
        self.num_vars = num_vars;
        self
    }

    /// Evaluates the formula; `model[v - 1]` is the value of variable `v`.
    pub fn is_satisfied_by(&self, model: &[bool]) -> bool {
        self.clauses.iter().all(|c| c.is_satisfied_by(model))
    }

    /// Indices of tautological clauses.
    pub fn tautologies(&self) -> Vec<usize> {
        (0..self.clauses.len()).filter(|&i| self.clauses[i].is_tautology()).collect()
    }

    /// Returns a copy with `lit` appended to clause `clause_index`.
    ///
    /// The variable of `lit` must not occur in the target clause. A variable
    /// one past `num_vars` is accepted and raises `num_vars`.
    pub fn add_literal(&self, clause_index: usize, lit: Literal) -> Result<Cnf, EditError> {
        let len = self.clauses.len();
        if clause_index >= len {
            return Err(EditError::IndexOutOfRange { index: clause_index, len });
        }
        let var = lit.var();
        if var > self.num_vars + 1 {
            return Err(EditError::VariableTooLarge { var, limit: self.num_vars + 1 });
        }
        if self.clauses[clause_index].contains_var(var) {
            return Err(EditError::VariableAlreadyInClause { index: clause_index, var });
        }
        let mut out = self.clone();
        out.clauses[clause_index].lits.push(lit);
        out.num_vars = out.num_vars.max(var);
        Ok(out)
    }

    /// Returns a copy with `extra` appended after the existing clauses.
    pub fn extended(&self, extra: &[Clause]) -> Cnf {
        let mut out = self.clone();
        out.clauses.extend_from_slice(extra);
        out.num_vars = out.num_vars.max(extra.iter().map(Clause::max_var).max().unwrap_or(0));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimacsErrorKind {
    MissingHeader,
    DuplicateHeader,
    MalformedHeader,
    InvalidToken,
    LiteralOutOfRange { literal: i64, num_vars: u32 },
    MissingTerminator,
    ClauseCountMismatch { declared: usize, found: usize },
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("DIMACS error at line {line}: {kind}")]
pub struct DimacsError {
    pub line: usize,
    pub kind: DimacsErrorKind,
}

impl fmt::Display for DimacsErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DimacsErrorKind::MissingHeader => write!(f, "clause data before `p cnf` header"),
            DimacsErrorKind::DuplicateHeader => write!(f, "second `p cnf` header"),
            DimacsErrorKind::MalformedHeader => write!(f, "malformed header, expected `p cnf <vars> <clauses>`"),
            DimacsErrorKind::InvalidToken => write!(f, "token is not an integer"),
            DimacsErrorKind::LiteralOutOfRange { literal, num_vars } => {
                write!(f, "literal {literal} exceeds declared variable count {num_vars}")
            }
            DimacsErrorKind::MissingTerminator => write!(f, "last clause is not terminated by 0"),
            DimacsErrorKind::ClauseCountMismatch { declared, found } => {
                write!(f, "header declares {declared} clauses, found {found}")
            }
        }
    }
}

/// Non-fatal observations made while parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DimacsWarning {
    DuplicateLiteral { line: usize, clause: usize },
    Tautology { line: usize, clause: usize },
    ClauseCountMismatch { declared: usize, found: usize },
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Treat a clause count differing from the header as an error.
    pub strict: bool,
}

#[derive(Debug, Clone)]
pub struct Parsed {
    pub cnf: Cnf,
    pub warnings: Vec<DimacsWarning>,
}

/// Parses DIMACS CNF leniently (clause count mismatches become warnings).
pub fn parse_dimacs(text: &str) -> Result<Cnf, DimacsError> {
    parse_dimacs_with(text, ParseOptions::default()).map(|p| p.cnf)
}

pub fn parse_dimacs_with(text: &str, opts: ParseOptions) -> Result<Parsed, DimacsError> {
    let mut header: Option<(u32, usize)> = None;
    let mut clauses = Vec::new();
    let mut warnings = Vec::new();
    let mut current: Vec<Literal> = Vec::new();
    let mut current_start = 0usize;
    let mut last_line = 0usize;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        last_line = line_no;
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() || line.starts_with('c') {
            continue;
        }
        // SATLIB files end with a `%` line followed by junk.
        if line.starts_with('%') {
            break;
        }
        if line.starts_with('p') {
            if header.is_some() {
                return Err(DimacsError { line: line_no, kind: DimacsErrorKind::DuplicateHeader });
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let malformed = DimacsError { line: line_no, kind: DimacsErrorKind::MalformedHeader };
            if parts.len() != 4 || parts[0] != "p" || parts[1] != "cnf" {
                return Err(malformed);
            }
            let vars: u32 = parts[2].parse().map_err(|_| malformed.clone())?;
            let count: usize = parts[3].parse().map_err(|_| malformed)?;
            header = Some((vars, count));
            continue;
        }
        let Some((num_vars, _)) = header else {
            return Err(DimacsError { line: line_no, kind: DimacsErrorKind::MissingHeader });
        };
        for tok in line.split_whitespace() {
            let value: i64 = tok
                .parse()
                .map_err(|_| DimacsError { line: line_no, kind: DimacsErrorKind::InvalidToken })?;
            if value == 0 {
                let (clause, dropped) = Clause::dedup(current.drain(..));
                let idx = clauses.len();
                if dropped {
                    log::warn!("line {current_start}: duplicate literal removed from clause {idx}");
                    warnings.push(DimacsWarning::DuplicateLiteral { line: current_start, clause: idx });
                }
                if clause.is_tautology() {
                    warnings.push(DimacsWarning::Tautology { line: current_start, clause: idx });
                }
                clauses.push(clause);
                continue;
            }
            if value.unsigned_abs() > u64::from(num_vars) {
                return Err(DimacsError {
                    line: line_no,
                    kind: DimacsErrorKind::LiteralOutOfRange { literal: value, num_vars },
                });
            }
            if current.is_empty() {
                current_start = line_no;
            }
            current.push(Literal::from_dimacs(value as i32));
        }
    }

    let Some((num_vars, declared)) = header else {
        return Err(DimacsError { line: last_line.max(1), kind: DimacsErrorKind::MissingHeader });
    };
    if !current.is_empty() {
        return Err(DimacsError { line: last_line, kind: DimacsErrorKind::MissingTerminator });
    }
    if declared != clauses.len() {
        let kind = DimacsErrorKind::ClauseCountMismatch { declared, found: clauses.len() };
        if opts.strict {
            return Err(DimacsError { line: last_line.max(1), kind });
        }
        warnings.push(DimacsWarning::ClauseCountMismatch { declared, found: clauses.len() });
    }
    Ok(Parsed { cnf: Cnf { num_vars, clauses }, warnings })
}

/// Writes DIMACS CNF with LF line endings, one clause per line.
pub fn serialize_dimacs(cnf: &Cnf) -> String {
    let mut out = String::with_capacity(16 + cnf.num_literals() * 4);
    out.push_str(&format!("p cnf {} {}\n", cnf.num_vars, cnf.clauses.len()));
    for c in &cnf.clauses {
        for l in &c.lits {
            out.push_str(&l.to_dimacs().to_string());
            out.push(' ');
        }
        out.push_str("0\n");
    }
    out
}
