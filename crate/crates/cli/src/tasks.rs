//! Task files: one JSON object per line.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use guidedec::Strategy;
use serde::{Deserialize, Serialize};

use crate::Failure;

pub const MAX_PHRASES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskId {
    Number(u64),
    Text(String),
}

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TaskId::Number(n) => write!(f, "{n}"),
            TaskId::Text(s) => f.write_str(s),
        }
    }
}

/// One prompt with its storyline. Unset fields fall back to command-line
/// flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<TaskId>,
    pub prompt: String,
    #[serde(default)]
    pub guide_phrases: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

impl TaskRecord {
    pub fn inline(prompt: &str, phrases: Vec<String>) -> Self {
        Self {
            task_id: None,
            prompt: prompt.to_string(),
            guide_phrases: phrases,
            strategy: None,
            lambda0: None,
            k: None,
            max_tokens: None,
            seed: None,
            samples: None,
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.guide_phrases.len() > MAX_PHRASES {
            return Err(format!(
                "{} guide phrases, at most {MAX_PHRASES} allowed",
                self.guide_phrases.len()
            ));
        }
        if self.guide_phrases.iter().any(|p| p.trim().is_empty()) {
            return Err("empty guide phrase".into());
        }
        if self.samples == Some(0) {
            return Err("samples must be at least 1".into());
        }
        Ok(())
    }
}

/// A task with its resolved id. Tasks without an explicit id get their
/// 0-based position in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: String,
    pub record: TaskRecord,
}

pub fn parse_tasks(text: &str, origin: &str) -> Result<Vec<Task>, Failure> {
    let mut tasks = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = |msg: String| Failure::usage(format!("{origin}:{}: {msg}", n + 1));
        let record: TaskRecord = serde_json::from_str(line).map_err(|e| at(e.to_string()))?;
        record.validate().map_err(at)?;
        let id = record
            .task_id
            .as_ref()
            .map_or_else(|| tasks.len().to_string(), ToString::to_string);
        if !seen.insert(id.clone()) {
            return Err(at(format!("duplicate task id {id:?}")));
        }
        tasks.push(Task { id, record });
    }
    Ok(tasks)
}

pub fn read_tasks(path: &Path) -> Result<Vec<Task>, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    parse_tasks(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_default_to_position() {
        let text = "{\"prompt\": \"a\"}\n\n{\"prompt\": \"b\", \"task_id\": \"x\"}\n{\"prompt\": \"c\", \"task_id\": 7}\n";
        let tasks = parse_tasks(text, "t").unwrap();
        let ids: Vec<&str> = tasks.iter().map(|t| t.id.as_str()).collect();
        assert_eq!(ids, ["0", "x", "7"]);
    }

    #[test]
    fn errors_name_the_line() {
        let bad = "{\"prompt\": \"a\"}\nnot json\n";
        assert!(parse_tasks(bad, "t.jsonl")
            .unwrap_err()
            .message
            .starts_with("t.jsonl:2:"));
        let unknown = "{\"prompt\": \"a\", \"promt\": 1}\n";
        assert!(parse_tasks(unknown, "t").is_err());
        let zero = "{\"prompt\": \"a\", \"samples\": 0}\n";
        assert!(parse_tasks(zero, "t")
            .unwrap_err()
            .message
            .contains("samples"));
        let many = format!(
            "{{\"prompt\": \"a\", \"guide_phrases\": {:?}}}\n",
            vec!["p"; 11]
        );
        assert!(parse_tasks(&many, "t").is_err());
        let dup = "{\"prompt\": \"a\", \"task_id\": 1}\n{\"prompt\": \"a\", \"task_id\": \"1\"}\n";
        assert!(parse_tasks(dup, "t")
            .unwrap_err()
            .message
            .contains("duplicate"));
    }

    #[test]
    fn strategy_names() {
        let t = parse_tasks(
            "{\"prompt\": \"a\", \"strategy\": \"boost\", \"lambda0\": 0.5}",
            "t",
        )
        .unwrap();
        assert_eq!(t[0].record.strategy, Some(Strategy::FusionBoost));
        assert!(parse_tasks("{\"prompt\": \"a\", \"strategy\": \"greedy\"}", "t").is_err());
    }
}
