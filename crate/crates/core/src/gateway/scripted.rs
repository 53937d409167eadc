use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{ChatRequest, ChatResponse, ModelRole, Provider, ProviderError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    /// The n-th request (1-based) for the record's role.
    Ordinal(usize),
    /// Any request whose prompt text contains the substring.
    Substring(String),
}

/// One scripted answer. `task` restricts the record to one question scope.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    pub role: ModelRole,
    pub matcher: Matcher,
    pub response: String,
}

impl ScriptRecord {
    pub fn ordinal(role: ModelRole, n: usize, response: impl Into<String>) -> Self {
        ScriptRecord {
            task: None,
            role,
            matcher: Matcher::Ordinal(n),
            response: response.into(),
        }
    }

    pub fn substring(role: ModelRole, needle: impl Into<String>, response: impl Into<String>) -> Self {
        ScriptRecord {
            task: None,
            role,
            matcher: Matcher::Substring(needle.into()),
            response: response.into(),
        }
    }

    pub fn for_task(mut self, task: impl Into<String>) -> Self {
        self.task = Some(task.into());
        self
    }
}

/// Trace lines are replayable too: each one answers its role's ordinal.
#[derive(Deserialize)]
struct TraceLine {
    #[serde(default)]
    task: Option<String>,
    role: ModelRole,
    ordinal: usize,
    #[serde(default)]
    raw_response: Option<String>,
    #[serde(default)]
    cached: bool,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ReplayLine {
    Script(ScriptRecord),
    Trace(TraceLine),
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("reading replay file: {0}")]
    Io(#[from] std::io::Error),
    #[error("replay line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Answers requests from a fixed script. Deterministic: matching depends
/// only on role, per-role request ordinal and prompt text.
#[derive(Debug)]
pub struct ScriptedProvider {
    records: Vec<ScriptRecord>,
    strict: bool,
    vision: bool,
    scope: Option<String>,
    ordinals: Mutex<HashMap<ModelRole, usize>>,
}

impl ScriptedProvider {
    pub fn new(records: Vec<ScriptRecord>, strict: bool) -> Self {
        ScriptedProvider {
            records,
            strict,
            vision: true,
            scope: None,
            ordinals: Mutex::new(HashMap::new()),
        }
    }

    pub fn without_vision(mut self) -> Self {
        self.vision = false;
        self
    }

    /// Parses a replay file: script records or trace records, one per line.
    pub fn parse_replay(text: &str) -> Result<Vec<ScriptRecord>, ReplayError> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ReplayLine = serde_json::from_str(line).map_err(|e| ReplayError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            out.push(match parsed {
                ReplayLine::Script(r) => r,
                // Failed and cache-served queries never consumed an ordinal.
                ReplayLine::Trace(TraceLine {
                    raw_response: Some(response),
                    cached: false,
                    task,
                    role,
                    ordinal,
                }) => ScriptRecord {
                    task,
                    role,
                    matcher: Matcher::Ordinal(ordinal),
                    response,
                },
                ReplayLine::Trace(_) => continue,
            });
        }
        Ok(out)
    }

    pub fn from_file(path: &Path, strict: bool) -> Result<Self, ReplayError> {
        let text = std::fs::read_to_string(path)?;
        Ok(ScriptedProvider::new(Self::parse_replay(&text)?, strict))
    }

    pub fn records(&self) -> &[ScriptRecord] {
        &self.records
    }

    fn in_scope(&self, r: &ScriptRecord) -> bool {
        match (&r.task, &self.scope) {
            (None, _) => true,
            (Some(t), Some(s)) => t == s,
            (Some(_), None) => false,
        }
    }
}

impl Provider for ScriptedProvider {
    fn id(&self) -> &str {
        "scripted"
    }

    fn supports_vision(&self) -> bool {
        self.vision
    }

    fn complete(
        &self,
        role: ModelRole,
        _model: &str,
        request: &ChatRequest,
    ) -> Result<ChatResponse, ProviderError> {
        let ordinal = {
            let mut ords = self.ordinals.lock().expect("ordinal lock poisoned");
            let n = ords.entry(role).or_insert(0);
            *n += 1;
            *n
        };
        let prompt = request.prompt_text();
        let fired: Vec<&ScriptRecord> = self
            .records
            .iter()
            .filter(|r| r.role == role && self.in_scope(r))
            .filter(|r| match &r.matcher {
                Matcher::Ordinal(n) => *n == ordinal,
                Matcher::Substring(s) => prompt.contains(s.as_str()),
            })
            .collect();
        match fired.as_slice() {
            [one] => Ok(ChatResponse::new(one.response.clone())),
            [] if self.strict => Err(ProviderError::ScriptMiss { role, ordinal }),
            [] => Ok(ChatResponse::new(String::new())),
            many => Err(ProviderError::AmbiguousMatcher {
                role,
                ordinal,
                count: many.len(),
            }),
        }
    }

    fn scoped(self: Arc<Self>, scope: &str) -> Arc<dyn Provider> {
        Arc::new(ScriptedProvider {
            records: self.records.clone(),
            strict: self.strict,
            vision: self.vision,
            scope: Some(scope.to_string()),
            ordinals: Mutex::new(HashMap::new()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ChatMessage;

    fn ask(p: &dyn Provider, role: ModelRole, text: &str) -> Result<String, ProviderError> {
        p.complete(role, "m", &ChatRequest::new(vec![ChatMessage::user(text)]))
            .map(|r| r.text)
    }

    #[test]
    fn ordinals_answer_in_order() {
        let p = ScriptedProvider::new(
            vec![
                ScriptRecord::ordinal(ModelRole::Planner, 1, "r1"),
                ScriptRecord::ordinal(ModelRole::Planner, 2, "r2"),
            ],
            true,
        );
        assert_eq!(ask(&p, ModelRole::Planner, "a").unwrap(), "r1");
        assert!(ask(&p, ModelRole::Summary, "a").is_err());
        assert_eq!(ask(&p, ModelRole::Planner, "b").unwrap(), "r2");
        assert_eq!(
            ask(&p, ModelRole::Planner, "c").unwrap_err(),
            ProviderError::ScriptMiss {
                role: ModelRole::Planner,
                ordinal: 3
            }
        );
    }

    #[test]
    fn substring_fires_only_on_match() {
        let p = ScriptedProvider::new(
            vec![ScriptRecord::substring(ModelRole::FinalAnswer, "Q2", "Answer: Acme")],
            true,
        );
        assert!(ask(&p, ModelRole::FinalAnswer, "about Q1").is_err());
        assert_eq!(ask(&p, ModelRole::FinalAnswer, "about Q2").unwrap(), "Answer: Acme");
    }

    #[test]
    fn two_matchers_are_ambiguous() {
        let p = ScriptedProvider::new(
            vec![
                ScriptRecord::ordinal(ModelRole::Planner, 1, "a"),
                ScriptRecord::substring(ModelRole::Planner, "x", "b"),
            ],
            true,
        );
        assert!(matches!(
            ask(&p, ModelRole::Planner, "x").unwrap_err(),
            ProviderError::AmbiguousMatcher { count: 2, .. }
        ));
    }

    #[test]
    fn lenient_mode_answers_empty() {
        let p = ScriptedProvider::new(vec![], false);
        assert_eq!(ask(&p, ModelRole::Planner, "x").unwrap(), "");
    }

    #[test]
    fn scopes_filter_records_and_reset_ordinals() {
        let p = Arc::new(ScriptedProvider::new(
            vec![
                ScriptRecord::ordinal(ModelRole::Planner, 1, "t1").for_task("t1"),
                ScriptRecord::ordinal(ModelRole::Planner, 1, "t2").for_task("t2"),
                ScriptRecord::ordinal(ModelRole::FinalAnswer, 1, "shared"),
            ],
            true,
        ));
        let a = p.clone().scoped("t1");
        let b = p.clone().scoped("t2");
        assert_eq!(ask(a.as_ref(), ModelRole::Planner, "").unwrap(), "t1");
        assert_eq!(ask(b.as_ref(), ModelRole::Planner, "").unwrap(), "t2");
        assert_eq!(ask(a.as_ref(), ModelRole::FinalAnswer, "").unwrap(), "shared");
        assert_eq!(ask(b.as_ref(), ModelRole::FinalAnswer, "").unwrap(), "shared");
    }

    #[test]
    fn replay_accepts_script_and_trace_lines() {
        let text = r#"{"role":"planner","matcher":{"ordinal":1},"response":"f_group_by(A)"}
{"task":"q1","role":"final_answer","matcher":{"substring":"Q2"},"response":"Answer: x"}

{"step":2,"role":"planner","ordinal":2,"prompt_hash":"ab","raw_response":"<END>","parsed_call":"<END>","rows":1,"columns":1,"flags":[]}
{"stage":"coarse","role":"vision_describe","ordinal":1,"prompt_hash":"cd","error":"provider unavailable"}
"#;
        let recs = ScriptedProvider::parse_replay(text).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[1].task.as_deref(), Some("q1"));
        assert_eq!(recs[2], ScriptRecord::ordinal(ModelRole::Planner, 2, "<END>"));
        assert!(matches!(
            ScriptedProvider::parse_replay("{\"role\":1}\n").unwrap_err(),
            ReplayError::Parse { line: 1, .. }
        ));
    }
}
