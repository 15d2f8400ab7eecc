//! Single-call grammar: `name(key=value, ...)`.
//!
//! Values are decimal numbers (`-12`, `34.0725`), `true`/`false`, or double
//! quoted strings of letters, digits, spaces, `-`, `.` and `:`. Only spaces
//! count as whitespace. Columns in errors are 0-based byte offsets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::registry::{is_valid_identifier, CoerceError, Literal, Registry, Value};
use super::CallString;
use crate::airdata::PopulationClass;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormatError {
    #[error("syntax error at column {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown function `{name}` at column {position}")]
    UnknownFunction { name: String, position: usize },
    #[error("`{function}` has no parameter `{name}` (column {position})")]
    UnknownParameter {
        function: String,
        name: String,
        position: usize,
    },
    #[error("parameter `{name}` given twice (column {position})")]
    DuplicateParameter { name: String, position: usize },
    #[error("parameter `{name}` expects {expected} (column {position})")]
    TypeMismatch {
        name: String,
        expected: String,
        position: usize,
    },
    #[error("parameter `{name}` = {value} is outside [{}, {}] (column {position})", bound(*min), bound(*max))]
    OutOfBounds {
        name: String,
        value: String,
        min: Option<f64>,
        max: Option<f64>,
        position: usize,
    },
    #[error("`{function}` is missing required parameter(s) {} (column {position})", missing.join(", "))]
    MissingParameters {
        function: String,
        missing: Vec<String>,
        position: usize,
    },
}

fn bound(b: Option<f64>) -> String {
    b.map_or_else(|| "unbounded".to_string(), |v| v.to_string())
}

impl FormatError {
    pub fn position(&self) -> usize {
        match self {
            FormatError::Syntax { position, .. }
            | FormatError::UnknownFunction { position, .. }
            | FormatError::UnknownParameter { position, .. }
            | FormatError::DuplicateParameter { position, .. }
            | FormatError::TypeMismatch { position, .. }
            | FormatError::OutOfBounds { position, .. }
            | FormatError::MissingParameters { position, .. } => *position,
        }
    }
}

/// A call that passed the format check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedCall {
    pub function: String,
    pub args: BTreeMap<String, Value>,
    /// The exact string that was checked.
    pub raw: String,
}

impl ParsedCall {
    pub fn float(&self, name: &str) -> Option<f64> {
        match self.args.get(name)? {
            Value::Float(v) => Some(*v),
            Value::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn int(&self, name: &str) -> Option<i64> {
        match self.args.get(name)? {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn date(&self, name: &str) -> Option<NaiveDate> {
        match self.args.get(name)? {
            Value::Date(d) => Some(*d),
            _ => None,
        }
    }

    pub fn class(&self, name: &str) -> Option<PopulationClass> {
        match self.args.get(name)? {
            Value::Class(c) => Some(*c),
            _ => None,
        }
    }

    pub fn boolean(&self, name: &str) -> Option<bool> {
        match self.args.get(name)? {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }
}

impl fmt::Display for ParsedCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.function)?;
        for (i, (k, v)) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            match v {
                Value::Int(x) => write!(f, "{k}={x}")?,
                Value::Float(x) => write!(f, "{k}={x}")?,
                Value::Bool(x) => write!(f, "{k}={x}")?,
                Value::Date(x) => write!(f, "{k}=\"{x}\"")?,
                Value::Class(x) => write!(f, "{k}=\"{}\"", x.as_str())?,
            }
        }
        f.write_str(")")
    }
}

struct RawArg {
    name: String,
    name_pos: usize,
    value: Literal,
    value_text: String,
    value_pos: usize,
}

struct RawCall {
    name: String,
    name_pos: usize,
    args: Vec<RawArg>,
    close_pos: usize,
}

fn is_string_char(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b' ' | b'-' | b'.' | b':')
}

struct Lexer<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, FormatError> {
        Err(FormatError::Syntax {
            position: self.pos,
            message: message.into(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn spaces(&mut self) {
        while self.peek() == Some(b' ') {
            self.pos += 1;
        }
    }

    fn expect(&mut self, b: u8) -> Result<(), FormatError> {
        match self.peek() {
            Some(c) if c == b => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => self.err(format!("expected `{}`, found {}", b as char, describe(c))),
            None => self.err(format!("expected `{}`, found end of input", b as char)),
        }
    }

    fn word(&mut self) -> &'a str {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_') {
            self.pos += 1;
        }
        std::str::from_utf8(&self.s[start..self.pos]).expect("ascii")
    }

    fn identifier(&mut self) -> Result<(String, usize), FormatError> {
        let start = self.pos;
        let w = self.word();
        if w.is_empty() {
            return match self.peek() {
                Some(c) => self.err(format!("expected an identifier, found {}", describe(c))),
                None => self.err("expected an identifier, found end of input"),
            };
        }
        if !is_valid_identifier(w) {
            self.pos = start;
            return self.err(format!("`{w}` is not a permitted identifier"));
        }
        Ok((w.to_string(), start))
    }

    fn digits(&mut self) -> usize {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        self.pos - start
    }

    fn literal(&mut self) -> Result<(Literal, String, usize), FormatError> {
        let start = self.pos;
        match self.peek() {
            Some(b'"') => {
                self.pos += 1;
                while self.peek().is_some_and(is_string_char) {
                    self.pos += 1;
                }
                if self.peek() != Some(b'"') {
                    return match self.peek() {
                        Some(c) => self.err(format!("{} is not allowed in a string", describe(c))),
                        None => self.err("unterminated string"),
                    };
                }
                self.pos += 1;
                let body = std::str::from_utf8(&self.s[start + 1..self.pos - 1]).expect("ascii");
                Ok((Literal::Str(body.to_string()), self.text(start), start))
            }
            Some(c) if c == b'-' || c.is_ascii_digit() => {
                if c == b'-' {
                    self.pos += 1;
                }
                if self.digits() == 0 {
                    return self.err("expected digits");
                }
                if self.peek() == Some(b'.') {
                    self.pos += 1;
                    if self.digits() == 0 {
                        return self.err("expected digits after `.`");
                    }
                }
                let text = self.text(start);
                Ok((Literal::Number(text.clone()), text, start))
            }
            Some(c) if c.is_ascii_alphabetic() => match self.word() {
                "true" => Ok((Literal::Bool(true), "true".into(), start)),
                "false" => Ok((Literal::Bool(false), "false".into(), start)),
                w => {
                    let w = w.to_string();
                    self.pos = start;
                    self.err(format!("`{w}` is not a value; strings need double quotes"))
                }
            },
            Some(c) => self.err(format!("expected a value, found {}", describe(c))),
            None => self.err("expected a value, found end of input"),
        }
    }

    fn text(&self, start: usize) -> String {
        String::from_utf8_lossy(&self.s[start..self.pos]).into_owned()
    }
}

fn describe(b: u8) -> String {
    if b.is_ascii_graphic() {
        format!("`{}`", b as char)
    } else {
        format!("byte 0x{b:02x}")
    }
}

fn parse_raw(s: &str) -> Result<RawCall, FormatError> {
    let mut lx = Lexer { s: s.as_bytes(), pos: 0 };
    lx.spaces();
    let (name, name_pos) = lx.identifier()?;
    lx.spaces();
    lx.expect(b'(')?;
    lx.spaces();
    let mut args = Vec::new();
    if lx.peek() != Some(b')') {
        loop {
            let (arg, name_pos) = lx.identifier()?;
            lx.spaces();
            lx.expect(b'=')?;
            lx.spaces();
            let (value, value_text, value_pos) = lx.literal()?;
            args.push(RawArg {
                name: arg,
                name_pos,
                value,
                value_text,
                value_pos,
            });
            lx.spaces();
            match lx.peek() {
                Some(b',') => {
                    lx.pos += 1;
                    lx.spaces();
                }
                Some(b')') => break,
                Some(c) => return lx.err(format!("expected `,` or `)`, found {}", describe(c))),
                None => return lx.err("expected `,` or `)`, found end of input"),
            }
        }
    }
    let close_pos = lx.pos;
    lx.expect(b')')?;
    lx.spaces();
    if let Some(c) = lx.peek() {
        return lx.err(format!("unexpected {} after the call", describe(c)));
    }
    Ok(RawCall {
        name,
        name_pos,
        args,
        close_pos,
    })
}

/// Parses `call` and validates it against the registry documentation.
pub fn format_check(call: &CallString, registry: &Registry) -> Result<ParsedCall, FormatError> {
    let raw = parse_raw(call.as_str())?;
    let spec = registry
        .get(&raw.name)
        .ok_or_else(|| FormatError::UnknownFunction {
            name: raw.name.clone(),
            position: raw.name_pos,
        })?;
    let mut args = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for a in &raw.args {
        let param = spec.param(&a.name).ok_or_else(|| FormatError::UnknownParameter {
            function: spec.name.clone(),
            name: a.name.clone(),
            position: a.name_pos,
        })?;
        if !seen.insert(a.name.as_str()) {
            return Err(FormatError::DuplicateParameter {
                name: a.name.clone(),
                position: a.name_pos,
            });
        }
        let value = param.coerce(&a.value).map_err(|e| match e {
            CoerceError::Type => FormatError::TypeMismatch {
                name: a.name.clone(),
                expected: param.kind.describe().to_string(),
                position: a.value_pos,
            },
            CoerceError::Bounds { min, max } => FormatError::OutOfBounds {
                name: a.name.clone(),
                value: a.value_text.clone(),
                min,
                max,
                position: a.value_pos,
            },
        })?;
        args.insert(a.name.clone(), value);
    }
    let missing: Vec<String> = spec
        .params
        .iter()
        .filter(|p| p.required && !seen.contains(p.name.as_str()))
        .map(|p| p.name.clone())
        .collect();
    if !missing.is_empty() {
        return Err(FormatError::MissingParameters {
            function: spec.name.clone(),
            missing,
            position: raw.close_pos,
        });
    }
    Ok(ParsedCall {
        function: spec.name.clone(),
        args,
        raw: call.as_str().to_string(),
    })
}
