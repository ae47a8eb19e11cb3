//! Reader and writer for the Matpower `.m` case format.
//!
//! Only the subset used by case files is understood: `function mpc = name`,
//! scalar and string assignments, and numeric matrix literals. Cell arrays
//! (`mpc.bus_name = {...}`) and unknown statements are skipped.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;

use log::warn;

use crate::error::{ModelError, ParseError};
use crate::net_model::{Branch, Bus, Generator, Load, NetworkCase};

pub mod col {
    pub const BUS_I: usize = 0;
    pub const BUS_TYPE: usize = 1;
    pub const PD: usize = 2;
    pub const QD: usize = 3;
    pub const GS: usize = 4;
    pub const BS: usize = 5;
    pub const BASE_KV: usize = 9;
    pub const VMAX: usize = 11;
    pub const VMIN: usize = 12;

    pub const GEN_BUS: usize = 0;
    pub const QMAX: usize = 3;
    pub const QMIN: usize = 4;
    pub const GEN_STATUS: usize = 7;
    pub const PMAX: usize = 8;
    pub const PMIN: usize = 9;

    pub const F_BUS: usize = 0;
    pub const T_BUS: usize = 1;
    pub const BR_R: usize = 2;
    pub const BR_X: usize = 3;
    pub const BR_B: usize = 4;
    pub const RATE_A: usize = 5;
    pub const TAP: usize = 8;
    pub const SHIFT: usize = 9;
    pub const BR_STATUS: usize = 10;
    pub const ANGMIN: usize = 11;
    pub const ANGMAX: usize = 12;

    pub const MODEL: usize = 0;
    pub const NCOST: usize = 3;
    pub const COST: usize = 4;
}

const MIN_BUS_COLS: usize = 13;
const MIN_GEN_COLS: usize = 10;
const MIN_BRANCH_COLS: usize = 13;
const MIN_GENCOST_COLS: usize = 4;

/// Matpower case data with the file's column layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawCase {
    pub function_name: String,
    pub base_mva: f64,
    pub bus: Vec<Vec<f64>>,
    pub gen: Vec<Vec<f64>>,
    pub branch: Vec<Vec<f64>>,
    /// Empty when the file has no cost data.
    pub gencost: Vec<Vec<f64>>,
}

/// Blanks out `%` comments (outside single-quoted strings), keeping newlines
/// so byte offsets still map to the original lines.
fn strip_comments(text: &str) -> Vec<u8> {
    let mut out = text.as_bytes().to_vec();
    let mut in_str = false;
    let mut in_comment = false;
    for b in out.iter_mut() {
        match *b {
            b'\n' => {
                in_comment = false;
                in_str = false;
            }
            _ if in_comment => *b = b' ',
            b'\'' => in_str = !in_str,
            b'%' if !in_str => {
                in_comment = true;
                *b = b' ';
            }
            _ => {}
        }
    }
    out
}

struct Scanner {
    src: Vec<u8>,
    pos: usize,
    line: usize,
}

impl Scanner {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
        }
        Some(c)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_ascii_whitespace()) {
            self.bump();
        }
    }

    fn skip_inline_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\r')) {
            self.bump();
        }
    }

    /// Identifier including dots, parentheses and their contents, e.g. `mpc.gen(:, 3)`.
    fn word(&mut self) -> String {
        let start = self.pos;
        let mut depth = 0usize;
        while let Some(c) = self.peek() {
            let ok =
                c.is_ascii_alphanumeric() || c == b'_' || c == b'.' || c == b'(' || (depth > 0 && c != b'\n');
            if !ok {
                break;
            }
            match c {
                b'(' => depth += 1,
                b')' => depth = depth.saturating_sub(1),
                _ => {}
            }
            self.bump();
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }

    fn rest_of_statement(&mut self) -> String {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c == b';' || c == b'\n' {
                break;
            }
            self.bump();
        }
        let s = String::from_utf8_lossy(&self.src[start..self.pos])
            .trim()
            .to_string();
        if self.peek() == Some(b';') {
            self.bump();
        }
        s
    }

    fn skip_until(&mut self, close: u8) -> bool {
        while let Some(c) = self.bump() {
            if c == close {
                return true;
            }
        }
        false
    }

    /// Reads a matrix literal after the opening `[`.
    fn matrix(&mut self, field: &str, start_line: usize) -> Result<Vec<Vec<f64>>, ParseError> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut row: Vec<f64> = Vec::new();
        let mut row_line = self.line;
        let finish_row = |rows: &mut Vec<Vec<f64>>, row: &mut Vec<f64>, line: usize| {
            if row.is_empty() {
                return Ok(());
            }
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(ParseError::RaggedRow {
                        field: field.to_string(),
                        line,
                        row: rows.len() + 1,
                        found: row.len(),
                        expected: first.len(),
                    });
                }
            }
            rows.push(std::mem::take(row));
            Ok(())
        };
        loop {
            self.skip_inline_ws();
            match self.peek() {
                None => {
                    return Err(ParseError::Unterminated {
                        field: field.to_string(),
                        line: start_line,
                    })
                }
                Some(b']') => {
                    self.bump();
                    finish_row(&mut rows, &mut row, row_line)?;
                    return Ok(rows);
                }
                Some(b';' | b'\n') => {
                    self.bump();
                    finish_row(&mut rows, &mut row, row_line)?;
                    row_line = self.line;
                }
                Some(b',') => {
                    self.bump();
                }
                Some(_) => {
                    if row.is_empty() {
                        row_line = self.line;
                    }
                    let start = self.pos;
                    while let Some(c) = self.peek() {
                        if c.is_ascii_whitespace() || matches!(c, b',' | b';' | b']') {
                            break;
                        }
                        self.bump();
                    }
                    let tok = String::from_utf8_lossy(&self.src[start..self.pos]).into_owned();
                    if tok == "..." {
                        // line continuation
                        self.skip_until(b'\n');
                        continue;
                    }
                    let v = parse_number(&tok).ok_or_else(|| ParseError::NotANumber {
                        field: field.to_string(),
                        line: self.line,
                        row: rows.len() + 1,
                        col: row.len() + 1,
                        token: tok.clone(),
                    })?;
                    row.push(v);
                }
            }
        }
    }
}

fn parse_number(tok: &str) -> Option<f64> {
    match tok {
        "Inf" | "+Inf" | "inf" => Some(f64::INFINITY),
        "-Inf" | "-inf" => Some(f64::NEG_INFINITY),
        "NaN" | "nan" => Some(f64::NAN),
        _ => {
            let v: f64 = tok.parse().ok()?;
            v.is_finite().then_some(v)
        }
    }
}

fn require_cols(rows: &[Vec<f64>], field: &'static str, line: usize, min: usize) -> Result<(), ParseError> {
    match rows.first() {
        Some(r) if r.len() < min => Err(ParseError::TooFewColumns {
            field: field.to_string(),
            line,
            min,
            found: r.len(),
        }),
        _ => Ok(()),
    }
}

/// Parses the text of a Matpower case file.
pub fn parse_matpower(text: &str) -> Result<RawCase, ParseError> {
    let mut sc = Scanner {
        src: strip_comments(text),
        pos: 0,
        line: 1,
    };
    let mut raw = RawCase::default();
    let mut base_mva = None;
    let mut found: [Option<usize>; 4] = [None; 4];
    loop {
        sc.skip_ws();
        let Some(c) = sc.peek() else { break };
        if !(c.is_ascii_alphabetic() || c == b'_') {
            sc.rest_of_statement();
            continue;
        }
        let line = sc.line;
        let word = sc.word();
        if word == "function" {
            let rest = sc.rest_of_statement();
            let name = rest.rsplit('=').next().unwrap_or("").trim();
            raw.function_name = name.to_string();
            continue;
        }
        let Some(field) = word.strip_prefix("mpc.") else {
            sc.rest_of_statement();
            continue;
        };
        sc.skip_inline_ws();
        if sc.peek() != Some(b'=') {
            sc.rest_of_statement();
            continue;
        }
        sc.bump();
        sc.skip_inline_ws();
        match sc.peek() {
            Some(b'[') => {
                sc.bump();
                let slot = match field {
                    "bus" => Some(0),
                    "gen" => Some(1),
                    "branch" => Some(2),
                    "gencost" => Some(3),
                    _ => None,
                };
                let m = sc.matrix(field, line)?;
                if let Some(k) = slot {
                    found[k] = Some(line);
                    match k {
                        0 => raw.bus = m,
                        1 => raw.gen = m,
                        2 => raw.branch = m,
                        _ => raw.gencost = m,
                    }
                }
                sc.rest_of_statement();
            }
            Some(b'{') => {
                if !sc.skip_until(b'}') {
                    return Err(ParseError::Unterminated {
                        field: field.to_string(),
                        line,
                    });
                }
                sc.rest_of_statement();
            }
            _ => {
                let value = sc.rest_of_statement();
                if field == "baseMVA" {
                    let v = parse_number(&value).ok_or_else(|| ParseError::NotANumber {
                        field: field.to_string(),
                        line,
                        row: 1,
                        col: 1,
                        token: value.clone(),
                    })?;
                    base_mva = Some(v);
                }
            }
        }
    }
    raw.base_mva = base_mva.ok_or(ParseError::MissingField { field: "baseMVA" })?;
    let names = ["bus", "gen", "branch"];
    for (k, name) in names.iter().enumerate() {
        if found[k].is_none() {
            return Err(ParseError::MissingField { field: name });
        }
    }
    require_cols(&raw.bus, "bus", found[0].unwrap(), MIN_BUS_COLS)?;
    require_cols(&raw.gen, "gen", found[1].unwrap(), MIN_GEN_COLS)?;
    require_cols(&raw.branch, "branch", found[2].unwrap(), MIN_BRANCH_COLS)?;
    if let Some(line) = found[3] {
        require_cols(&raw.gencost, "gencost", line, MIN_GENCOST_COLS)?;
    }
    Ok(raw)
}

/// Shortest text that parses back to exactly `v`.
pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "Inf" } else { "-Inf" }.into()
    } else if v == 0.0 || (1e-5..1e15).contains(&v.abs()) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn write_matrix(out: &mut String, name: &str, header: &str, rows: &[Vec<f64>]) {
    if !header.is_empty() {
        let _ = writeln!(out, "%\t{header}");
    }
    let _ = writeln!(out, "mpc.{name} = [");
    for r in rows {
        out.push('\t');
        let cells: Vec<String> = r.iter().map(|&v| format_number(v)).collect();
        out.push_str(&cells.join("\t"));
        out.push_str(";\n");
    }
    out.push_str("];\n\n");
}

/// Emits a Matpower case file.
pub fn write_matpower(raw: &RawCase) -> String {
    let mut out = String::new();
    let name = if raw.function_name.is_empty() {
        "mpc"
    } else {
        &raw.function_name
    };
    let _ = writeln!(out, "function mpc = {name}\n");
    out.push_str("mpc.version = '2';\n\n");
    let _ = writeln!(out, "mpc.baseMVA = {};\n", format_number(raw.base_mva));
    write_matrix(
        &mut out,
        "bus",
        "bus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin",
        &raw.bus,
    );
    write_matrix(
        &mut out,
        "gen",
        "bus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin",
        &raw.gen,
    );
    write_matrix(
        &mut out,
        "branch",
        "fbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax",
        &raw.branch,
    );
    if !raw.gencost.is_empty() {
        write_matrix(
            &mut out,
            "gencost",
            "2\tstartup\tshutdown\tn\tc(n-1)\t...\tc0",
            &raw.gencost,
        );
    }
    out
}

/// Matpower angle limits in degrees to radians, clamped to `[-π/2, π/2]`.
/// `0/0` and `±360` both mean "unconstrained".
fn angle_limits(min_deg: f64, max_deg: f64) -> (f64, f64) {
    let (lo, hi) = if min_deg == 0.0 && max_deg == 0.0 {
        (-FRAC_PI_2, FRAC_PI_2)
    } else {
        (min_deg * PI / 180.0, max_deg * PI / 180.0)
    };
    (lo.clamp(-FRAC_PI_2, 0.0), hi.clamp(0.0, FRAC_PI_2))
}

fn cost_coefficients(row: &[f64], idx: usize) -> Result<(f64, f64, f64), ParseError> {
    let bad = |message: String| ParseError::UnsupportedCost { row: idx, message };
    if row[col::MODEL] != 2.0 {
        return Err(bad(format!(
            "cost model {} is not supported; only polynomial (2) costs are",
            row[col::MODEL]
        )));
    }
    let n = row[col::NCOST];
    if !(n >= 0.0 && n.fract() == 0.0) {
        return Err(bad(format!("invalid NCOST {n}")));
    }
    let n = n as usize;
    if n > 3 {
        return Err(bad(format!("polynomial of degree {} exceeds quadratic", n - 1)));
    }
    if row.len() < col::COST + n {
        return Err(bad(format!("expected {n} coefficients")));
    }
    // stored highest degree first
    let mut c = [0.0; 3];
    for k in 0..n {
        c[n - 1 - k] = row[col::COST + k];
    }
    Ok((c[2], c[1], c[0]))
}

/// Converts file units to the per-unit model, dropping isolated buses and
/// out-of-service branches and generators.
pub fn raw_to_case(raw: &RawCase, name: &str) -> Result<NetworkCase, ParseError> {
    let base = raw.base_mva;
    if !(base > 0.0) {
        return Err(ModelError::Invalid(format!("baseMVA {base}")).into());
    }
    let mut buses = Vec::with_capacity(raw.bus.len());
    let mut loads = Vec::new();
    for r in &raw.bus {
        let id = r[col::BUS_I] as usize;
        let kind = r[col::BUS_TYPE] as i64;
        if kind == 4 {
            warn!("dropping isolated bus {id}");
            continue;
        }
        buses.push(Bus {
            id,
            base_kv: r[col::BASE_KV],
            vmin: r[col::VMIN],
            vmax: r[col::VMAX],
            shunt_g: r[col::GS] / base,
            shunt_b: r[col::BS] / base,
            is_slack: kind == 3,
        });
        if r[col::PD] != 0.0 || r[col::QD] != 0.0 {
            loads.push(Load {
                bus: id,
                pd: r[col::PD] / base,
                qd: r[col::QD] / base,
            });
        }
    }
    let mut branches = Vec::with_capacity(raw.branch.len());
    for (k, r) in raw.branch.iter().enumerate() {
        if r[col::BR_STATUS] == 0.0 {
            continue;
        }
        let (ang_min, ang_max) = angle_limits(r[col::ANGMIN], r[col::ANGMAX]);
        branches.push(Branch {
            id: k + 1,
            from_bus: r[col::F_BUS] as usize,
            to_bus: r[col::T_BUS] as usize,
            r: r[col::BR_R],
            x: r[col::BR_X],
            b_sh: r[col::BR_B],
            g_sh: 0.0,
            tap: if r[col::TAP] == 0.0 { 1.0 } else { r[col::TAP] },
            shift: r[col::SHIFT] * PI / 180.0,
            rate_a: r[col::RATE_A] / base,
            ang_min,
            ang_max,
            status: true,
        });
    }
    if !raw.gencost.is_empty() && raw.gencost.len() < raw.gen.len() {
        return Err(ParseError::UnsupportedCost {
            row: raw.gencost.len() + 1,
            message: format!("{} generators but {} cost rows", raw.gen.len(), raw.gencost.len()),
        });
    }
    if raw.gencost.len() > raw.gen.len() {
        warn!("ignoring reactive power cost rows");
    }
    let mut generators = Vec::with_capacity(raw.gen.len());
    for (k, r) in raw.gen.iter().enumerate() {
        if r[col::GEN_STATUS] <= 0.0 {
            continue;
        }
        let (c2, c1, c0) = match raw.gencost.get(k) {
            Some(row) => cost_coefficients(row, k + 1)?,
            None => (0.0, 0.0, 0.0),
        };
        generators.push(Generator {
            id: k + 1,
            bus: r[col::GEN_BUS] as usize,
            pmin: r[col::PMIN] / base,
            pmax: r[col::PMAX] / base,
            qmin: r[col::QMIN] / base,
            qmax: r[col::QMAX] / base,
            c2,
            c1,
            c0,
            status: true,
        });
    }
    let case = NetworkCase {
        name: name.to_string(),
        base_mva: base,
        buses,
        branches,
        generators,
        loads,
    };
    case.validate()?;
    Ok(case)
}

/// Writes the branch `r`, `x`, `b` of `case` into a copy of `template`;
/// every other entry is taken from the template unchanged.
pub fn case_to_raw(case: &NetworkCase, template: &RawCase) -> Result<RawCase, ModelError> {
    let mut raw = template.clone();
    let mut missing = Vec::new();
    for br in &case.branches {
        match raw.branch.get_mut(br.id.wrapping_sub(1)) {
            Some(row) => {
                row[col::BR_R] = br.r;
                row[col::BR_X] = br.x;
                row[col::BR_B] = br.b_sh;
            }
            None => missing.push(format!("branch {}", br.id)),
        }
    }
    if !missing.is_empty() {
        return Err(ModelError::DanglingReferences(missing));
    }
    Ok(raw)
}
