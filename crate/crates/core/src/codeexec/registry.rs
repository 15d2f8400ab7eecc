use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::safety::is_denylisted_word;
use super::CodeExecError;
use crate::airdata::PopulationClass;

const DEFAULT_MANIFEST: &str = include_str!("manifest.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamKind {
    Latitude,
    Longitude,
    Hours,
    Integer,
    Number,
    Bool,
    Date,
    PopulationClass,
}

impl ParamKind {
    fn default_bounds(self) -> (Option<f64>, Option<f64>) {
        match self {
            ParamKind::Latitude => (Some(-90.0), Some(90.0)),
            ParamKind::Longitude => (Some(-180.0), Some(180.0)),
            ParamKind::Hours => (Some(1.0), Some(crate::airdata::MAX_HOURS as f64)),
            _ => (None, None),
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            ParamKind::Latitude => "number",
            ParamKind::Longitude => "number",
            ParamKind::Hours => "integer",
            ParamKind::Integer => "integer",
            ParamKind::Number => "number",
            ParamKind::Bool => "true or false",
            ParamKind::Date => "\"YYYY-MM-DD\"",
            ParamKind::PopulationClass => "population class string",
        }
    }
}

/// A typed argument value after format checking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Float(f64),
    Bool(bool),
    Date(NaiveDate),
    Class(PopulationClass),
}

/// Literal as written in a call string.
#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Number(String),
    Str(String),
    Bool(bool),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum CoerceError {
    Type,
    Bounds { min: Option<f64>, max: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    #[serde(default = "yes")]
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub doc: String,
}

fn yes() -> bool {
    true
}

impl ParamSpec {
    pub fn new(name: &str, kind: ParamKind) -> Self {
        Self {
            name: name.into(),
            kind,
            required: true,
            min: None,
            max: None,
            doc: String::new(),
        }
    }

    pub fn bounds(&self) -> (Option<f64>, Option<f64>) {
        let (lo, hi) = self.kind.default_bounds();
        (self.min.or(lo), self.max.or(hi))
    }

    fn in_bounds(&self, v: f64) -> Result<(), CoerceError> {
        let (min, max) = self.bounds();
        if min.is_some_and(|m| v < m) || max.is_some_and(|m| v > m) {
            return Err(CoerceError::Bounds { min, max });
        }
        Ok(())
    }

    pub(crate) fn coerce(&self, literal: &Literal) -> Result<Value, CoerceError> {
        match (self.kind, literal) {
            (ParamKind::Hours | ParamKind::Integer, Literal::Number(text)) => {
                let v: i64 = text.parse().map_err(|_| CoerceError::Type)?;
                self.in_bounds(v as f64)?;
                Ok(Value::Int(v))
            }
            (ParamKind::Latitude | ParamKind::Longitude | ParamKind::Number, Literal::Number(text)) => {
                let v: f64 = text.parse().map_err(|_| CoerceError::Type)?;
                self.in_bounds(v)?;
                Ok(Value::Float(v))
            }
            (ParamKind::Bool, Literal::Bool(b)) => Ok(Value::Bool(*b)),
            (ParamKind::Date, Literal::Str(s)) => NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .map(Value::Date)
                .map_err(|_| CoerceError::Type),
            (ParamKind::PopulationClass, Literal::Str(s)) => s
                .parse::<PopulationClass>()
                .map(Value::Class)
                .map_err(|_| CoerceError::Type),
            _ => Err(CoerceError::Type),
        }
    }

    fn random_literal<R: Rng + ?Sized>(&self, rng: &mut R) -> String {
        let (min, max) = self.bounds();
        match self.kind {
            ParamKind::Hours | ParamKind::Integer => {
                let lo = min.unwrap_or(-1000.0).ceil() as i64;
                let hi = max.unwrap_or(1000.0).floor() as i64;
                rng.random_range(lo..=hi).to_string()
            }
            ParamKind::Latitude | ParamKind::Longitude | ParamKind::Number => {
                let lo = min.unwrap_or(-1000.0);
                let hi = max.unwrap_or(1000.0);
                let v: f64 = rng.random_range(lo..=hi);
                let text = format!("{:.4}", v);
                // Rounding can step past a bound by half an ulp of the 4th decimal.
                if text.parse::<f64>().is_ok_and(|x| x >= lo && x <= hi) {
                    text
                } else {
                    format!("{lo}")
                }
            }
            ParamKind::Bool => rng.random_bool(0.5).to_string(),
            ParamKind::Date => {
                let base = NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date");
                let d = base + chrono::Duration::days(rng.random_range(0..1000));
                format!("\"{d}\"")
            }
            ParamKind::PopulationClass => {
                let c = PopulationClass::ALL.choose(rng).expect("non-empty");
                format!("\"{}\"", c.as_str())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub name: String,
    pub doc: String,
    #[serde(default)]
    pub params: Vec<ParamSpec>,
}

impl FunctionSpec {
    pub fn new(name: &str, doc: &str, params: Vec<ParamSpec>) -> Self {
        Self {
            name: name.into(),
            doc: doc.into(),
            params,
        }
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn signature(&self) -> String {
        let names: Vec<&str> = self.params.iter().map(|p| p.name.as_str()).collect();
        format!("{}({})", self.name, names.join(", "))
    }

    /// A random call string that satisfies the grammar and every parameter
    /// validator. Optional parameters are included at random, keyword order
    /// and spacing vary.
    pub fn random_valid_call<R: Rng + ?Sized>(&self, rng: &mut R) -> String {
        let mut params: Vec<&ParamSpec> = self
            .params
            .iter()
            .filter(|p| p.required || rng.random_bool(0.5))
            .collect();
        params.shuffle(rng);
        let pad = |rng: &mut R| if rng.random_bool(0.3) { " " } else { "" };
        let args: Vec<String> = params
            .iter()
            .map(|p| {
                let (a, b) = (pad(rng), pad(rng));
                format!("{}{a}={b}{}", p.name, p.random_literal(rng))
            })
            .collect();
        let sep = format!(",{}", pad(rng));
        format!("{}{}({})", self.name, pad(rng), args.join(&sep))
    }

    fn validate(&self) -> Result<(), CodeExecError> {
        check_identifier(&self.name)?;
        let mut seen = BTreeSet::new();
        for p in &self.params {
            check_identifier(&p.name)?;
            if !seen.insert(p.name.as_str()) {
                return Err(CodeExecError::Manifest(format!(
                    "{}: duplicate parameter `{}`",
                    self.name, p.name
                )));
            }
            if let (Some(lo), Some(hi)) = p.bounds() {
                if lo > hi {
                    return Err(CodeExecError::Manifest(format!(
                        "{}.{}: empty bounds [{lo}, {hi}]",
                        self.name, p.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Identifier policy shared by manifests and the call grammar: a lowercase
/// letter, then lowercase letters, digits and single underscores.
pub fn is_valid_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    chars.next().is_some_and(|c| c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
        && !name.contains("__")
        && name.len() <= 64
}

fn check_identifier(name: &str) -> Result<(), CodeExecError> {
    if !is_valid_identifier(name) {
        return Err(CodeExecError::Manifest(format!("invalid identifier `{name}`")));
    }
    if is_denylisted_word(name) {
        return Err(CodeExecError::Manifest(format!("identifier `{name}` is denylisted")));
    }
    Ok(())
}

/// Immutable set of approved functions.
#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    specs: Vec<FunctionSpec>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::from_json(DEFAULT_MANIFEST).expect("bundled manifest is valid")
    }
}

impl Registry {
    pub fn new(specs: Vec<FunctionSpec>) -> Result<Self, CodeExecError> {
        let mut seen = BTreeSet::new();
        for s in &specs {
            s.validate()?;
            if !seen.insert(s.name.as_str()) {
                return Err(CodeExecError::Manifest(format!("duplicate function `{}`", s.name)));
            }
        }
        Ok(Self { specs })
    }

    pub fn from_json(text: &str) -> Result<Self, CodeExecError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let specs: Vec<FunctionSpec> = serde_path_to_error::deserialize(de)
            .map_err(|e| CodeExecError::Manifest(format!("{}: {}", e.path(), e.inner())))?;
        Self::new(specs)
    }

    pub fn load(path: &Path) -> Result<Self, CodeExecError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CodeExecError::Manifest(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.specs).expect("specs serialize")
    }

    /// Returns a registry extended with `spec`.
    pub fn with(mut self, spec: FunctionSpec) -> Result<Self, CodeExecError> {
        self.specs.push(spec);
        Self::new(self.specs)
    }

    pub fn get(&self, name: &str) -> Option<&FunctionSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn specs(&self) -> &[FunctionSpec] {
        &self.specs
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// System prompt documenting `specs` for the call-writing model.
    pub fn documentation_prompt(specs: &[FunctionSpec]) -> String {
        let mut out = String::from(
            "You can call exactly one of the functions below. Reply with a single call on one \
             line, keyword arguments only, in the form name(arg=value, ...). Numbers are plain \
             decimals, strings use double quotes, booleans are true or false. Reply with the call \
             and nothing else.\n",
        );
        for s in specs {
            let _ = write!(out, "\n{}\n  {}\n", s.signature(), s.doc);
            for p in &s.params {
                let (min, max) = p.bounds();
                let _ = write!(out, "  {}: {}", p.name, p.kind.describe());
                match (min, max) {
                    (Some(lo), Some(hi)) => {
                        let _ = write!(out, " in [{lo}, {hi}]");
                    }
                    (Some(lo), None) => {
                        let _ = write!(out, " >= {lo}");
                    }
                    (None, Some(hi)) => {
                        let _ = write!(out, " <= {hi}");
                    }
                    (None, None) => {}
                }
                if !p.doc.is_empty() {
                    let _ = write!(out, ", {}", p.doc);
                }
                out.push_str(if p.required { " (required)\n" } else { " (optional)\n" });
            }
        }
        out
    }
}
