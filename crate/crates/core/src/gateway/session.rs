use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{prompt_hash, ChatRequest, ChatResponse, Gateway, GatewayError, ModelRole, QueryBudget, Stage};

/// One model query as recorded in a question's trace file.
///
/// Trace files are line-delimited records of this type and can be fed back
/// to the scripted provider: each successful record answers its role's
/// ordinal with `raw_response`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub stage: Stage,
    pub role: ModelRole,
    pub ordinal: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt: Option<usize>,
    pub prompt_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed_call: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default)]
    pub cached: bool,
}

/// Handle to a recorded query, for attaching step details afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryId(usize);

/// Everything one question's pipeline needs to talk to models: the gateway
/// view, the question's budget, and its trace log.
pub struct Session<'a> {
    gateway: &'a Gateway,
    budget: &'a QueryBudget,
    records: Mutex<Vec<TraceRecord>>,
    ordinals: Mutex<HashMap<ModelRole, usize>>,
}

impl<'a> Session<'a> {
    pub fn new(gateway: &'a Gateway, budget: &'a QueryBudget) -> Self {
        Session {
            gateway,
            budget,
            records: Mutex::new(Vec::new()),
            ordinals: Mutex::new(HashMap::new()),
        }
    }

    pub fn gateway(&self) -> &Gateway {
        self.gateway
    }

    pub fn budget(&self) -> &QueryBudget {
        self.budget
    }

    /// Sends one request and records it.
    pub fn ask(
        &self,
        role: ModelRole,
        request: ChatRequest,
    ) -> (Result<ChatResponse, GatewayError>, QueryId) {
        let hash = prompt_hash(&request.prompt_text());
        let result = self.gateway.complete(role, request, self.budget);
        // Only requests that reached a provider advance its ordinal.
        let reached_provider = !matches!(
            result,
            Err(GatewayError::BudgetExceeded { .. })
                | Err(GatewayError::RoleUnbound(_))
                | Err(GatewayError::NoVisionSupport(_))
        );
        let ordinal = {
            let mut ords = self.ordinals.lock().expect("ordinal lock poisoned");
            let n = ords.entry(role).or_insert(0);
            if reached_provider && !result.as_ref().is_ok_and(|r| r.cached) {
                *n += 1;
            }
            *n
        };
        let record = TraceRecord {
            stage: role.stage(),
            role,
            ordinal,
            step: None,
            attempt: None,
            prompt_hash: hash,
            raw_response: result.as_ref().ok().map(|r| r.text.clone()),
            error: result.as_ref().err().map(|e| e.to_string()),
            parsed_call: None,
            rows: None,
            columns: None,
            flags: Vec::new(),
            cached: result.as_ref().is_ok_and(|r| r.cached),
        };
        let mut records = self.records.lock().expect("trace lock poisoned");
        records.push(record);
        (result, QueryId(records.len() - 1))
    }

    pub fn annotate(&self, id: QueryId, f: impl FnOnce(&mut TraceRecord)) {
        let mut records = self.records.lock().expect("trace lock poisoned");
        if let Some(r) = records.get_mut(id.0) {
            f(r);
        }
    }

    /// The trace in a deterministic order: by stage, then role, then the
    /// order queries were issued within that role.
    pub fn into_trace(self) -> Vec<TraceRecord> {
        let mut records: Vec<(usize, TraceRecord)> = self
            .records
            .into_inner()
            .expect("trace lock poisoned")
            .into_iter()
            .enumerate()
            .collect();
        records.sort_by_key(|(i, r)| (stage_rank(r.stage), r.role, *i));
        records.into_iter().map(|(_, r)| r).collect()
    }
}

fn stage_rank(s: Stage) -> u8 {
    match s {
        Stage::Coarse => 0,
        Stage::Fine => 1,
        Stage::Final => 2,
    }
}
