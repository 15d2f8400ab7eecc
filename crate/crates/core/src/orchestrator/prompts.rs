use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::OrchestratorError;

const DEFAULT_LIBRARY: &str = include_str!("prompts.toml");

/// Output schema a worker is asked to follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SchemaId {
    #[serde(rename = "summary-v1")]
    SummaryV1,
    #[serde(rename = "stats-v1")]
    StatsV1,
}

impl SchemaId {
    pub const ALL: [SchemaId; 2] = [SchemaId::SummaryV1, SchemaId::StatsV1];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemaId::SummaryV1 => "summary-v1",
            SchemaId::StatsV1 => "stats-v1",
        }
    }

    /// First schema id mentioned in `text`.
    pub fn find_in(text: &str) -> Option<SchemaId> {
        Self::ALL
            .iter()
            .filter_map(|id| text.find(id.as_str()).map(|pos| (pos, *id)))
            .min()
            .map(|(_, id)| id)
    }
}

impl fmt::Display for SchemaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemaId {
    type Err = OrchestratorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|id| id.as_str() == s.trim())
            .ok_or_else(|| OrchestratorError::Prompt(format!("unknown schema id {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PlannerPrompts {
    pub system: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct WorkerPrompts {
    pub system: String,
    pub user: String,
    pub retry: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SchemaPrompts {
    pub steps: Vec<String>,
    pub format: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct InstructorPrompts {
    pub trend: String,
    pub policy: String,
    pub health: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Preset {
    pub system: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PromptLibrary {
    pub planner: PlannerPrompts,
    pub worker: WorkerPrompts,
    pub schemas: BTreeMap<SchemaId, SchemaPrompts>,
    pub instructor: InstructorPrompts,
    #[serde(default)]
    pub presets: BTreeMap<String, Preset>,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self::from_toml(DEFAULT_LIBRARY).expect("bundled prompt library is valid")
    }
}

impl PromptLibrary {
    pub fn from_toml(text: &str) -> Result<Self, OrchestratorError> {
        let lib: PromptLibrary =
            toml::from_str(text).map_err(|e| OrchestratorError::Prompt(e.to_string()))?;
        for id in SchemaId::ALL {
            let s = lib
                .schemas
                .get(&id)
                .ok_or_else(|| OrchestratorError::Prompt(format!("schema {id} missing")))?;
            if s.steps.len() != 4 {
                return Err(OrchestratorError::Prompt(format!(
                    "schema {id} needs four steps, has {}",
                    s.steps.len()
                )));
            }
        }
        Ok(lib)
    }

    pub fn load(path: &Path) -> Result<Self, OrchestratorError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OrchestratorError::Prompt(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn schema(&self, id: SchemaId) -> &SchemaPrompts {
        &self.schemas[&id]
    }

    pub fn preset(&self, name: &str) -> Result<&Preset, OrchestratorError> {
        self.presets
            .get(name)
            .ok_or_else(|| OrchestratorError::Prompt(format!("unknown preset {name:?}")))
    }
}

/// Replaces `{NAME}` placeholders in one pass. Substituted values are not
/// rescanned. An unknown placeholder is an error.
pub fn render(template: &str, values: &[(&str, &str)]) -> Result<String, OrchestratorError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name_len = after
            .find(|c: char| !(c.is_ascii_uppercase() || c == '_'))
            .unwrap_or(after.len());
        if name_len > 0 && after[name_len..].starts_with('}') {
            let name = &after[..name_len];
            let value = values
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| OrchestratorError::Prompt(format!("no value for {{{name}}}")))?;
            out.push_str(value);
            rest = &after[name_len + 1..];
        } else {
            out.push('{');
            rest = after;
        }
    }
    out.push_str(rest);
    Ok(out.trim().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_library_loads() {
        let lib = PromptLibrary::default();
        assert_eq!(lib.schema(SchemaId::SummaryV1).steps.len(), 4);
        assert!(lib.schema(SchemaId::StatsV1).format.contains("pm25_std"));
        assert!(lib.preset("wildfire-la").unwrap().system.contains("Fire Department"));
        assert!(lib.preset("nope").is_err());
        for t in [&lib.instructor.trend, &lib.instructor.policy, &lib.instructor.health] {
            assert!(t.contains("{CONTEXT}"));
        }
        assert!(lib.worker.user.contains("{CHUNK_DATA}"));
        assert!(lib.worker.system.contains("{SCHEMA}"));
    }

    #[test]
    fn render_single_pass() {
        let out = render("a {X} b {Y}", &[("X", "{Y}"), ("Y", "2")]).unwrap();
        assert_eq!(out, "a {Y} b 2");
        assert_eq!(render("{\"k\": 1} {lower}", &[]).unwrap(), "{\"k\": 1} {lower}");
        assert!(render("{MISSING}", &[]).is_err());
    }

    #[test]
    fn schema_ids() {
        assert_eq!(SchemaId::find_in("use stats-v1 or summary-v1"), Some(SchemaId::StatsV1));
        assert_eq!(SchemaId::find_in("SCHEMA: summary-v1"), Some(SchemaId::SummaryV1));
        assert_eq!(SchemaId::find_in("summary v1"), None);
        assert_eq!("stats-v1".parse::<SchemaId>().unwrap(), SchemaId::StatsV1);
    }

    #[test]
    fn library_validation() {
        let bad =
            DEFAULT_LIBRARY.replace("\"2. Outlier detection: none required for this task.\",", "");
        assert_ne!(bad, DEFAULT_LIBRARY);
        assert!(PromptLibrary::from_toml(&bad).is_err());
        assert!(PromptLibrary::from_toml("x = 1").is_err());
    }
}
