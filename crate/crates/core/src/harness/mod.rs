//! Benchmark harness: dataset loading, per-question orchestration of the
//! coarse, fine and final stages, ablation modes, and reporting.

mod config;
mod dataset;
pub mod fixtures;
mod output;
mod report;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::answer::{build_final_context, generate_answer, AnswerError, TaskKind};
use crate::gateway::{BudgetCounts, Gateway, QueryBudget, Session, Stage, TraceRecord};
use crate::knowledge::{synthesize_knowledge, KnowledgeMode, KnowledgeTuple, Perspectives};
use crate::ops::{format_operation_call, OpSet};
use crate::planner::{run_fine_stage, LoopLimits, PlannerContext};
use crate::table::{estimate_tokens, size_bucket, SizeBucket};
use crate::templates::TemplateSet;

pub use config::{
    BudgetConfig, ConfigError, LoopLimitsConfig, ProviderConfig, RoleConfig, RunConfig, RunMode,
};
pub use dataset::{load_dataset, parse_fixture_tasks, table_from_records, DatasetError, DatasetTag, Task};
pub use output::{
    read_records, read_trace, trace_file_name, write_ablation, write_report, write_run, OutputError, ABLATION_JSON,
    ABLATION_TXT, CHAIN_SVG, RECORDS_FILE, REPORT_JSON, REPORT_TXT, TRACES_DIR,
};
pub use report::{aggregate, render_report, AblationReport, AblationRow, GroupStat, QueryStats, Report, ReportError};

/// One scored question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task_id: String,
    pub dataset: DatasetTag,
    pub task: TaskKind,
    pub mode: RunMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    pub template_version: String,
    pub question: String,
    pub gold: Vec<String>,
    pub predicted: Vec<String>,
    pub raw_answer: Option<String>,
    pub correct: bool,
    /// Executed calls in canonical form.
    pub history: Vec<String>,
    pub history_length: usize,
    pub table_tokens: usize,
    pub size_bucket: SizeBucket,
    pub final_rows: usize,
    pub final_columns: usize,
    pub budget: BudgetCounts,
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coarse_notes: Vec<String>,
    pub trace: String,
}

/// Shared, read-only inputs for running questions.
pub struct Pipeline {
    pub gateway: Gateway,
    pub templates: TemplateSet,
    pub mode: RunMode,
    pub allowed: OpSet,
    pub limits: LoopLimits,
    pub budget: BudgetConfig,
    pub workers: usize,
    pub split: Option<String>,
}

impl Pipeline {
    pub fn from_config(config: &RunConfig) -> Result<Pipeline, ConfigError> {
        config.validate()?;
        Ok(Pipeline {
            gateway: config.build_gateway()?,
            templates: config.load_templates()?,
            mode: config.mode,
            allowed: config.allowed_ops()?,
            limits: config.loop_limits(),
            budget: config.budget.clone(),
            workers: config.workers,
            split: config.split.clone(),
        })
    }

    /// Runs every stage for one task. Never fails: problems become flags.
    pub fn run_question(&self, task: &Task) -> (EvalRecord, Vec<TraceRecord>) {
        let gateway = self.gateway.scoped(&task.id);
        let budget = QueryBudget::new(self.budget.limits, self.budget.enforce);
        let session = Session::new(&gateway, &budget);

        let knowledge = match self.mode {
            RunMode::NoCoarse => KnowledgeTuple::unavailable(),
            RunMode::Offline => synthesize_knowledge(
                &task.table,
                &session,
                &self.templates,
                KnowledgeMode::Offline,
                Perspectives::default(),
            ),
            RunMode::Full | RunMode::NoFine => synthesize_knowledge(
                &task.table,
                &session,
                &self.templates,
                KnowledgeMode::Default,
                Perspectives::default(),
            ),
        };

        let mut flags: Vec<String> = Vec::new();
        let (t_final, history) = if self.mode == RunMode::NoFine {
            (task.table.clone(), Vec::new())
        } else {
            let ctx = PlannerContext {
                question: &task.question,
                knowledge: &knowledge,
                templates: &self.templates,
                allowed: self.allowed,
            };
            let outcome = run_fine_stage(&task.table, &ctx, &session, self.limits);
            flags.extend(outcome.flags.iter().map(|f| f.name().to_string()));
            let history = outcome.history.steps().iter().map(format_operation_call).collect();
            (outcome.table, history)
        };

        let context = build_final_context(&t_final, &task.question, &knowledge);
        let (answer, _) = generate_answer(&context, &session, &self.templates, task.kind);
        let (predicted, raw_answer, correct) = match answer {
            Ok(a) => {
                let correct = crate::answer::is_correct(&a, &task.gold);
                (a.denotations, Some(a.raw), correct)
            }
            Err(AnswerError::UnmappableVerdict { raw }) => {
                flags.push("unmappable_verdict".to_string());
                (Vec::new(), Some(raw), false)
            }
            Err(AnswerError::Gateway(e)) => {
                tracing::warn!(task = %task.id, error = %e, "final answer query failed");
                flags.push("final_error".to_string());
                (Vec::new(), None, false)
            }
        };

        let table_tokens = estimate_tokens(&task.table);
        let record = EvalRecord {
            task_id: task.id.clone(),
            dataset: task.dataset,
            task: task.kind,
            mode: self.mode,
            split: self.split.clone(),
            template_version: self.templates.version().to_string(),
            question: task.question.clone(),
            gold: task.gold.clone(),
            predicted,
            raw_answer,
            correct,
            history_length: history.len(),
            history,
            table_tokens,
            size_bucket: size_bucket(table_tokens),
            final_rows: t_final.row_count(),
            final_columns: t_final.column_count(),
            budget: BudgetCounts {
                coarse: budget.used(Stage::Coarse),
                fine: budget.used(Stage::Fine),
                final_: budget.used(Stage::Final),
            },
            flags,
            coarse_notes: knowledge.notes.clone(),
            trace: format!("traces/{}", trace_file_name(&task.id)),
        };
        (record, session.into_trace())
    }

    /// Runs all tasks on a pool of `workers` threads; output order follows
    /// `tasks`.
    pub fn run_all(&self, tasks: &[Task]) -> Vec<(EvalRecord, Vec<TraceRecord>)> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers.max(1))
            .build()
            .expect("worker pool");
        pool.install(|| tasks.par_iter().map(|t| self.run_question(t)).collect())
    }
}

/// The ablation sweep for `base`: the base run, both stage removals, and
/// the base run with each operation disabled in turn. Names are stable and
/// file-safe.
pub fn ablation_variants(base: &RunConfig) -> Vec<(String, RunConfig)> {
    let mut variants = vec![(base.mode.name().to_string(), base.clone())];
    for mode in [RunMode::NoCoarse, RunMode::NoFine] {
        if mode != base.mode {
            let mut c = base.clone();
            c.mode = mode;
            variants.push((mode.name().to_string(), c));
        }
    }
    let already = base.disabled().unwrap_or_default();
    for op in crate::ops::OpKind::ALL {
        if already.contains(&op) {
            continue;
        }
        let name = op.function_name().to_string();
        let mut c = base.clone();
        c.disabled_ops.push(name.clone());
        variants.push((format!("without_{name}"), c));
    }
    variants
}
