//! Reader for the subset of MATPOWER case files used by radial feeders.
//!
//! Only `mpc.baseMVA`, `mpc.bus`, `mpc.branch` and `mpc.gen` are read. Many
//! distribution cases store impedances in ohms and loads in kW and convert
//! them with trailing statements such as
//!
//! ```text
//! Vbase = mpc.bus(1, BASE_KV) * 1e3;
//! mpc.branch(:, [BR_R BR_X]) = mpc.branch(:, [BR_R BR_X]) / (Vbase^2 / Sbase);
//! ```
//!
//! so a small evaluator for scalar variables and column assignments is
//! included. Anything else (version strings, cell arrays, `idx_*` unpacking)
//! is skipped.

use std::collections::HashMap;

use crate::error::{LfError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RawBus {
    pub id: i64,
    pub bus_type: i64,
    pub pd: f64,
    pub qd: f64,
    pub gs: f64,
    pub bs: f64,
    pub base_kv: f64,
    pub vm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawBranch {
    pub from: i64,
    pub to: i64,
    pub r: f64,
    pub x: f64,
    pub b_charging: f64,
    pub tap: f64,
    pub status: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawGen {
    pub bus: i64,
    pub vg: f64,
    pub status: bool,
}

/// Case data as read from the file, before radial normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCase {
    pub base_mva: f64,
    pub buses: Vec<RawBus>,
    /// In-service branches only.
    pub branches: Vec<RawBranch>,
    pub gens: Vec<RawGen>,
}

impl RawCase {
    pub fn slack_bus(&self) -> &RawBus {
        self.buses
            .iter()
            .find(|b| b.bus_type == 3)
            .expect("parse_matpower guarantees one reference bus")
    }
}

fn malformed(line: usize, message: impl Into<String>) -> LfError {
    LfError::MalformedCase {
        line,
        message: message.into(),
    }
}

/// Parse MATPOWER case text.
pub fn parse_matpower(text: &str) -> Result<RawCase> {
    let mut state = CaseState::default();
    let mut pending: Option<(String, usize, String)> = None; // continued statement
    let mut matrix: Option<(String, usize, Vec<Vec<f64>>)> = None;
    let mut in_cell = false;

    for (idx, raw_line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = strip_comment(raw_line);

        if in_cell {
            if line.contains('}') {
                in_cell = false;
            }
            continue;
        }

        if let Some((name, start, rows)) = matrix.as_mut() {
            let (body, done) = match line.find(']') {
                Some(pos) => (&line[..pos], true),
                None => (line, false),
            };
            parse_matrix_rows(body, lineno, rows)?;
            if done {
                let (name, start, rows) = (name.clone(), *start, std::mem::take(rows));
                matrix = None;
                state.matrices.insert(name, (start, rows));
            }
            continue;
        }

        let trimmed = line.trim();
        let (stmt, stmt_line) = match pending.take() {
            Some((mut acc, start, _)) => {
                acc.push(' ');
                acc.push_str(trimmed);
                (acc, start)
            }
            None => (trimmed.to_string(), lineno),
        };
        if let Some(head) = stmt.strip_suffix("...") {
            pending = Some((head.to_string(), stmt_line, String::new()));
            continue;
        }
        let stmt = stmt.trim();
        if stmt.is_empty() || stmt.starts_with("function") {
            continue;
        }
        if stmt.contains("= {") || stmt.contains("={") {
            if !stmt.contains('}') {
                in_cell = true;
            }
            continue;
        }
        if let Some((name, rest)) = matrix_start(stmt) {
            let mut rows = Vec::new();
            match rest.find(']') {
                Some(pos) => {
                    parse_matrix_rows(&rest[..pos], lineno, &mut rows)?;
                    state.matrices.insert(name, (lineno, rows));
                }
                None => {
                    parse_matrix_rows(rest, lineno, &mut rows)?;
                    matrix = Some((name, lineno, rows));
                }
            }
            continue;
        }
        state.statement(stmt, stmt_line)?;
    }
    if let Some((name, start, _)) = matrix {
        return Err(malformed(start, format!("unterminated matrix mpc.{name}")));
    }
    state.finish()
}

fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '\'' => in_str = !in_str,
            '%' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

fn matrix_start(stmt: &str) -> Option<(String, &str)> {
    let rest = stmt.strip_prefix("mpc.")?;
    let eq = rest.find('=')?;
    let name = rest[..eq].trim();
    if name.is_empty() || !name.chars().all(|c| c.is_alphanumeric() || c == '_') {
        return None;
    }
    let rhs = rest[eq + 1..].trim_start();
    let body = rhs.strip_prefix('[')?;
    Some((name.to_string(), body))
}

fn parse_matrix_rows(body: &str, lineno: usize, rows: &mut Vec<Vec<f64>>) -> Result<()> {
    for piece in body.split(';') {
        let tokens: Vec<&str> = piece
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.is_empty() {
            continue;
        }
        let row = tokens
            .iter()
            .map(|t| parse_number(t).ok_or_else(|| malformed(lineno, format!("non-numeric token `{t}`"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(())
}

fn parse_number(tok: &str) -> Option<f64> {
    match tok {
        "Inf" | "inf" => Some(f64::INFINITY),
        "-Inf" | "-inf" => Some(f64::NEG_INFINITY),
        _ => tok.parse().ok(),
    }
}

#[derive(Default)]
struct CaseState {
    base_mva: Option<f64>,
    matrices: HashMap<String, (usize, Vec<Vec<f64>>)>,
    vars: HashMap<String, f64>,
}

impl CaseState {
    fn statement(&mut self, stmt: &str, line: usize) -> Result<()> {
        let stmt = stmt.trim_end_matches(';').trim();
        // `[A, B, ...] = idx_bus;` and similar unpacking
        if stmt.starts_with('[') {
            return Ok(());
        }
        let Some(eq) = find_assignment(stmt) else {
            return Ok(());
        };
        let (lhs, rhs) = (stmt[..eq].trim(), stmt[eq + 1..].trim());

        if lhs == "mpc.baseMVA" {
            let v = self
                .eval_scalar(rhs)
                .map_err(|m| malformed(line, format!("mpc.baseMVA: {m}")))?;
            self.base_mva = Some(v);
            return Ok(());
        }
        if let Some(target) = lhs.strip_prefix("mpc.") {
            if let Some(paren) = target.find('(') {
                let name = target[..paren].trim().to_string();
                return self
                    .column_assignment(&name, &target[paren..], rhs)
                    .map_err(|m| LfError::UnsupportedFeature(format!("line {line}: cannot evaluate `{stmt}`: {m}")));
            }
            return Ok(());
        }
        if lhs.chars().all(|c| c.is_alphanumeric() || c == '_') && !lhs.is_empty() {
            // scalar helper variable; silently skip what we cannot evaluate
            if let Ok(v) = self.eval_scalar(rhs) {
                self.vars.insert(lhs.to_string(), v);
            }
        }
        Ok(())
    }

    fn eval_scalar(&self, src: &str) -> std::result::Result<f64, String> {
        let tokens = tokenize(src)?;
        let mut p = ExprParser {
            tokens: &tokens,
            pos: 0,
            state: self,
        };
        let v = p.expr()?;
        p.expect_end()?;
        match v {
            Value::Scalar(s) => Ok(s),
            Value::Block(b) if b.len() == 1 && b[0].len() == 1 => Ok(b[0][0]),
            Value::Block(_) => Err("expected a scalar".into()),
        }
    }

    fn column_assignment(&mut self, name: &str, index_src: &str, rhs: &str) -> std::result::Result<(), String> {
        let tokens = tokenize(index_src)?;
        let mut p = ExprParser {
            tokens: &tokens,
            pos: 0,
            state: self,
        };
        let (rows_sel, cols_sel) = p.index_pair()?;
        p.expect_end()?;

        let tokens = tokenize(rhs)?;
        let mut p = ExprParser {
            tokens: &tokens,
            pos: 0,
            state: self,
        };
        let value = p.expr()?;
        p.expect_end()?;

        let (_, mat) = self
            .matrices
            .get_mut(name)
            .ok_or_else(|| format!("mpc.{name} is not defined"))?;
        let rows = rows_sel.resolve(mat.len())?;
        let ncols = mat.first().map_or(0, Vec::len);
        let cols = cols_sel.resolve(ncols)?;
        for (ri, &r) in rows.iter().enumerate() {
            for (ci, &c) in cols.iter().enumerate() {
                let v = match &value {
                    Value::Scalar(s) => *s,
                    Value::Block(b) => {
                        if b.len() != rows.len() || b[0].len() != cols.len() {
                            return Err("shape mismatch in assignment".into());
                        }
                        b[ri][ci]
                    }
                };
                let row = &mut mat[r];
                if c >= row.len() {
                    return Err(format!("column {} out of range", c + 1));
                }
                row[c] = v;
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<RawCase> {
        let base_mva = self.base_mva.ok_or_else(|| malformed(0, "missing mpc.baseMVA"))?;
        let (bus_line, bus_rows) = self
            .matrices
            .get("bus")
            .ok_or_else(|| malformed(0, "missing mpc.bus"))?;
        let (branch_line, branch_rows) = self
            .matrices
            .get("branch")
            .ok_or_else(|| malformed(0, "missing mpc.branch"))?;

        let mut buses = Vec::with_capacity(bus_rows.len());
        for (k, row) in bus_rows.iter().enumerate() {
            if row.len() < 10 {
                return Err(malformed(
                    *bus_line,
                    format!("bus row {} has {} columns, need at least 10", k + 1, row.len()),
                ));
            }
            buses.push(RawBus {
                id: row[0] as i64,
                bus_type: row[1] as i64,
                pd: row[2],
                qd: row[3],
                gs: row[4],
                bs: row[5],
                vm: row[7],
                base_kv: row[9],
            });
        }
        let mut branches = Vec::with_capacity(branch_rows.len());
        for (k, row) in branch_rows.iter().enumerate() {
            if row.len() < 11 {
                return Err(malformed(
                    *branch_line,
                    format!("branch row {} has {} columns, need at least 11", k + 1, row.len()),
                ));
            }
            let status = row[10] != 0.0;
            if !status {
                continue;
            }
            if row[9] != 0.0 {
                log::warn!("branch {} has a phase shift of {} deg, ignored", k + 1, row[9]);
            }
            branches.push(RawBranch {
                from: row[0] as i64,
                to: row[1] as i64,
                r: row[2],
                x: row[3],
                b_charging: row[4],
                tap: row[8],
                status,
            });
        }
        let gens = match self.matrices.get("gen") {
            Some((_, rows)) => rows
                .iter()
                .filter(|r| r.len() >= 8)
                .map(|r| RawGen {
                    bus: r[0] as i64,
                    vg: r[5],
                    status: r[7] != 0.0,
                })
                .collect(),
            None => Vec::new(),
        };

        let slack_count = buses.iter().filter(|b| b.bus_type == 3).count();
        if slack_count > 1 {
            return Err(LfError::UnsupportedFeature(format!(
                "{slack_count} reference buses; exactly one is supported"
            )));
        }
        if slack_count == 0 {
            return Err(LfError::UnsupportedFeature("no reference bus (type 3)".into()));
        }
        Ok(RawCase {
            base_mva,
            buses,
            branches,
            gens,
        })
    }
}

/// Position of the assignment `=` (not part of `==`, `<=`, ...).
fn find_assignment(stmt: &str) -> Option<usize> {
    let b = stmt.as_bytes();
    let mut depth = 0i32;
    for i in 0..b.len() {
        match b[i] {
            b'(' | b'[' => depth += 1,
            b')' | b']' => depth -= 1,
            b'=' if depth == 0 => {
                let prev = if i > 0 { b[i - 1] } else { b' ' };
                let next = b.get(i + 1).copied().unwrap_or(b' ');
                if next != b'=' && !matches!(prev, b'=' | b'<' | b'>' | b'~') {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(&'static str),
}

fn tokenize(src: &str) -> std::result::Result<Vec<Tok>, String> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                // `2.*x` style: a dot followed by an operator belongs to the operator
                if chars[i] == '.' && matches!(chars.get(i + 1), Some('*' | '/' | '^')) {
                    break;
                }
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let save = i;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let s: String = chars[start..i].iter().collect();
            out.push(Tok::Num(s.parse().map_err(|_| format!("bad number `{s}`"))?));
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let op = match two.as_str() {
            ".*" => Some(".*"),
            "./" => Some("./"),
            ".^" => Some(".^"),
            _ => None,
        };
        if let Some(op) = op {
            out.push(Tok::Op(op));
            i += 2;
            continue;
        }
        let op = match c {
            '+' => "+",
            '-' => "-",
            '*' => "*",
            '/' => "/",
            '^' => "^",
            '(' => "(",
            ')' => ")",
            '[' => "[",
            ']' => "]",
            ',' => ",",
            ':' => ":",
            '.' => ".",
            _ => return Err(format!("unexpected character `{c}`")),
        };
        out.push(Tok::Op(op));
        i += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum Value {
    Scalar(f64),
    /// rows × cols
    Block(Vec<Vec<f64>>),
}

#[derive(Debug, Clone)]
enum Selector {
    All,
    List(Vec<f64>),
}

impl Selector {
    fn resolve(&self, len: usize) -> std::result::Result<Vec<usize>, String> {
        match self {
            Selector::All => Ok((0..len).collect()),
            Selector::List(v) => v
                .iter()
                .map(|&k| {
                    let k1 = k as i64;
                    if k1 < 1 || k1 as usize > len || k1 as f64 != k {
                        Err(format!("index {k} out of range 1..={len}"))
                    } else {
                        Ok(k1 as usize - 1)
                    }
                })
                .collect(),
        }
    }
}

fn named_constant(name: &str) -> Option<f64> {
    let v = match name {
        // idx_bus
        "PQ" | "BUS_I" | "F_BUS" | "GEN_BUS" => 1,
        "PV" | "BUS_TYPE" | "T_BUS" | "PG" => 2,
        "REF" | "PD" | "BR_R" | "QG" => 3,
        "NONE" | "QD" | "BR_X" | "QMAX" => 4,
        "GS" | "BR_B" | "QMIN" => 5,
        "BS" | "RATE_A" | "VG" => 6,
        "BUS_AREA" | "RATE_B" | "MBASE" => 7,
        "VM" | "RATE_C" | "GEN_STATUS" => 8,
        "VA" | "TAP" | "PMAX" => 9,
        "BASE_KV" | "SHIFT" | "PMIN" => 10,
        "ZONE" | "BR_STATUS" => 11,
        "VMAX" | "ANGMIN" => 12,
        "VMIN" | "ANGMAX" => 13,
        _ => return None,
    };
    Some(v as f64)
}

struct ExprParser<'a> {
    tokens: &'a [Tok],
    pos: usize,
    state: &'a CaseState,
}

type EvalResult<T> = std::result::Result<T, String>;

impl ExprParser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn eat(&mut self, op: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Op(o)) if *o == op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, op: &str) -> EvalResult<()> {
        if self.eat(op) {
            Ok(())
        } else {
            Err(format!("expected `{op}`"))
        }
    }

    fn expect_end(&self) -> EvalResult<()> {
        if self.pos == self.tokens.len() {
            Ok(())
        } else {
            Err(format!("trailing tokens after position {}", self.pos))
        }
    }

    fn expr(&mut self) -> EvalResult<Value> {
        let mut acc = self.term()?;
        loop {
            if self.eat("+") {
                acc = binary(acc, self.term()?, |a, b| a + b, false)?;
            } else if self.eat("-") {
                acc = binary(acc, self.term()?, |a, b| a - b, false)?;
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> EvalResult<Value> {
        let mut acc = self.unary()?;
        loop {
            if self.eat("*") {
                acc = binary(acc, self.unary()?, |a, b| a * b, true)?;
            } else if self.eat(".*") {
                acc = binary(acc, self.unary()?, |a, b| a * b, false)?;
            } else if self.eat("/") {
                acc = binary(acc, self.unary()?, |a, b| a / b, true)?;
            } else if self.eat("./") {
                acc = binary(acc, self.unary()?, |a, b| a / b, false)?;
            } else {
                return Ok(acc);
            }
        }
    }

    fn unary(&mut self) -> EvalResult<Value> {
        if self.eat("-") {
            return map(self.unary()?, |a| -a);
        }
        if self.eat("+") {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> EvalResult<Value> {
        let base = self.primary()?;
        if self.eat("^") {
            let e = self.power_operand()?;
            return binary(base, e, f64::powf, true);
        }
        if self.eat(".^") {
            let e = self.power_operand()?;
            return binary(base, e, f64::powf, false);
        }
        Ok(base)
    }

    fn power_operand(&mut self) -> EvalResult<Value> {
        if self.eat("-") {
            return map(self.power_operand()?, |a| -a);
        }
        self.primary()
    }

    fn primary(&mut self) -> EvalResult<Value> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Value::Scalar(v))
            }
            Some(Tok::Op("(")) => {
                self.pos += 1;
                let v = self.expr()?;
                self.expect(")")?;
                Ok(v)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if name == "mpc" {
                    return self.mpc_ref();
                }
                if self.eat("(") {
                    let arg = self.expr()?;
                    self.expect(")")?;
                    let f: fn(f64) -> f64 = match name.as_str() {
                        "sin" => f64::sin,
                        "cos" => f64::cos,
                        "tan" => f64::tan,
                        "asin" => f64::asin,
                        "acos" => f64::acos,
                        "atan" => f64::atan,
                        "sqrt" => f64::sqrt,
                        "abs" => f64::abs,
                        "exp" => f64::exp,
                        "log" => f64::ln,
                        _ => return Err(format!("unknown function `{name}`")),
                    };
                    return map(arg, f);
                }
                if name == "pi" {
                    return Ok(Value::Scalar(std::f64::consts::PI));
                }
                if let Some(v) = self.state.vars.get(&name) {
                    return Ok(Value::Scalar(*v));
                }
                named_constant(&name)
                    .map(Value::Scalar)
                    .ok_or_else(|| format!("unknown variable `{name}`"))
            }
            other => Err(format!("unexpected token {other:?}")),
        }
    }

    fn mpc_ref(&mut self) -> EvalResult<Value> {
        self.expect(".")?;
        let Some(Tok::Ident(field)) = self.peek().cloned() else {
            return Err("expected field name after `mpc.`".into());
        };
        self.pos += 1;
        if field == "baseMVA" {
            return self
                .state
                .base_mva
                .map(Value::Scalar)
                .ok_or_else(|| "mpc.baseMVA used before definition".into());
        }
        let (_, mat) = self
            .state
            .matrices
            .get(&field)
            .ok_or_else(|| format!("mpc.{field} is not defined"))?;
        let (rsel, csel) = self.index_pair()?;
        let rows = rsel.resolve(mat.len())?;
        let cols = csel.resolve(mat.first().map_or(0, Vec::len))?;
        let mut block = Vec::with_capacity(rows.len());
        for &r in &rows {
            let mut row = Vec::with_capacity(cols.len());
            for &c in &cols {
                row.push(*mat[r].get(c).ok_or("column out of range")?);
            }
            block.push(row);
        }
        if block.len() == 1 && block[0].len() == 1 {
            Ok(Value::Scalar(block[0][0]))
        } else {
            Ok(Value::Block(block))
        }
    }

    fn index_pair(&mut self) -> EvalResult<(Selector, Selector)> {
        self.expect("(")?;
        let r = self.selector()?;
        self.expect(",")?;
        let c = self.selector()?;
        self.expect(")")?;
        Ok((r, c))
    }

    fn selector(&mut self) -> EvalResult<Selector> {
        if self.eat(":") {
            return Ok(Selector::All);
        }
        if self.eat("[") {
            let mut items = Vec::new();
            while !self.eat("]") {
                self.eat(",");
                if self.eat("]") {
                    break;
                }
                items.push(self.scalar_item()?);
            }
            return Ok(Selector::List(items));
        }
        Ok(Selector::List(vec![self.scalar_item()?]))
    }

    fn scalar_item(&mut self) -> EvalResult<f64> {
        match self.unary()? {
            Value::Scalar(s) => Ok(s),
            Value::Block(_) => Err("index must be scalar".into()),
        }
    }
}

fn map(v: Value, f: impl Fn(f64) -> f64) -> EvalResult<Value> {
    Ok(match v {
        Value::Scalar(s) => Value::Scalar(f(s)),
        Value::Block(b) => Value::Block(b.into_iter().map(|r| r.into_iter().map(&f).collect()).collect()),
    })
}

/// Element-wise binary op with scalar broadcasting. `matrix_op` marks the
/// MATLAB `*`, `/`, `^` forms, which are only element-wise when one side is
/// a scalar.
fn binary(a: Value, b: Value, f: impl Fn(f64, f64) -> f64, matrix_op: bool) -> EvalResult<Value> {
    Ok(match (a, b) {
        (Value::Scalar(x), Value::Scalar(y)) => Value::Scalar(f(x, y)),
        (Value::Block(m), Value::Scalar(y)) => Value::Block(
            m.into_iter()
                .map(|r| r.into_iter().map(|x| f(x, y)).collect())
                .collect(),
        ),
        (Value::Scalar(x), Value::Block(m)) => Value::Block(
            m.into_iter()
                .map(|r| r.into_iter().map(|y| f(x, y)).collect())
                .collect(),
        ),
        (Value::Block(m), Value::Block(n)) => {
            if matrix_op {
                return Err("matrix products between blocks are not supported".into());
            }
            if m.len() != n.len() || m[0].len() != n[0].len() {
                return Err("shape mismatch".into());
            }
            Value::Block(
                m.into_iter()
                    .zip(n)
                    .map(|(r, s)| r.into_iter().zip(s).map(|(x, y)| f(x, y)).collect())
                    .collect(),
            )
        }
    })
}
