//! Bundled desk-scale fixtures: a handful of tasks, a scripted replay that
//! answers them, and a run configuration tying the two together.

use std::path::Path;

use serde_json::json;

use crate::gateway::{ModelRole, ScriptRecord};

pub const TASKS_FILE: &str = "tasks.jsonl";
pub const SCRIPT_FILE: &str = "script.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
/// The quarterly revenue-to-R&D task.
pub const RD_EFFICIENCY_ID: &str = "quarterly-rd-efficiency";

struct Fixture {
    id: &'static str,
    question: &'static str,
    columns: &'static [&'static str],
    rows: &'static [&'static [&'static str]],
    gold: serde_json::Value,
    task: &'static str,
    planner: &'static [&'static str],
    answer: &'static str,
}

fn bundled() -> Vec<Fixture> {
    vec![
        Fixture {
            id: RD_EFFICIENCY_ID,
            question: "Which company had the highest R&D efficiency (revenue-to-R&D ratio) in Q2?",
            columns: &["Company", "Quarter", "Revenue", "R&D"],
            rows: &[
                &["Acme", "Q1", "120", "30"],
                &["Acme", "Q2", "150", "25"],
                &["Globex", "Q1", "200", "20"],
                &["Globex", "Q2", "210", "60"],
                &["Initech", "Q1", "90", "15"],
                &["Initech", "Q2", "96", "12"],
            ],
            gold: json!(["Initech"]),
            task: "qa",
            planner: &[
                "f_add_column(Efficiency_Ratio, Revenue / R&D)",
                "f_select_row(Quarter == \"Q2\")",
                "f_sort_by(Efficiency_Ratio, desc)",
                "<END>",
            ],
            answer: "The first row of the sorted Q2 table is Initech.\nAnswer: Initech",
        },
        Fixture {
            id: "medals-most-gold",
            question: "Which nation won the most gold medals?",
            columns: &["Nation", "Gold", "Silver", "Bronze"],
            rows: &[
                &["Norway", "16", "8", "13"],
                &["Germany", "12", "10", "5"],
                &["Canada", "4", "8", "14"],
                &["United States", "8", "10", "7"],
            ],
            gold: json!(["Norway"]),
            task: "qa",
            planner: &["f_sort_by(Gold, desc)", "f_select_column([Nation, Gold])", "<END>"],
            answer: "Answer: Norway",
        },
        Fixture {
            id: "parliament-green-count",
            question: "How many members belong to the Green party?",
            columns: &["Member", "Party", "Elected"],
            rows: &[
                &["Ana Silva", "Green", "2010"],
                &["Ben Okafor", "Labour", "2012"],
                &["Chen Wei", "Green", "2015"],
                &["Dara Kelly", "Liberal", "2015"],
                &["Eli Ross", "Labour", "2019"],
            ],
            gold: json!(["2"]),
            task: "qa",
            planner: &["f_select_row(Party == \"Green\")", "f_group_by(Party)", "<END>"],
            answer: "Answer: 2",
        },
        Fixture {
            id: "cities-over-five-million",
            question: "Which cities have a population over 5,000,000?",
            columns: &["City", "Country", "Population"],
            rows: &[
                &["Lagos", "Nigeria", "15,388,000"],
                &["Accra", "Ghana", "2,514,000"],
                &["Cairo", "Egypt", "10,230,350"],
                &["Nairobi", "Kenya", "4,397,073"],
            ],
            gold: json!(["Cairo", "Lagos"]),
            task: "qa",
            planner: &["f_select_row(Population > 5000000)", "f_select_column([City])", "<END>"],
            answer: "Answer: Lagos | Cairo",
        },
        Fixture {
            id: "quarterly-acme-growth",
            question: "Acme had higher revenue in Q2 than in Q1.",
            columns: &["Company", "Quarter", "Revenue"],
            rows: &[
                &["Acme", "Q1", "120"],
                &["Acme", "Q2", "150"],
                &["Globex", "Q1", "200"],
                &["Globex", "Q2", "210"],
            ],
            gold: json!("true"),
            task: "fact-verification",
            planner: &["f_select_row(Company == \"Acme\")", "<END>"],
            answer: "Q2 revenue (150) exceeds Q1 revenue (120).\nAnswer: true",
        },
        Fixture {
            id: "sales-quarter-count",
            question: "How many quarters are listed?",
            columns: &["Quarter", "Sales"],
            rows: &[&["Q1", "10"], &["Q2", "14"], &["Q3", "9"], &["Q4", "17"]],
            gold: json!(["4"]),
            task: "qa",
            planner: &["<END>"],
            answer: "Answer: 4",
        },
    ]
}

/// One jsonl task record per fixture.
pub fn tasks_jsonl() -> String {
    bundled()
        .iter()
        .map(|f| {
            json!({
                "id": f.id,
                "question": f.question,
                "table": {"columns": f.columns, "rows": f.rows},
                "gold": f.gold,
                "task": f.task,
            })
            .to_string()
                + "\n"
        })
        .collect()
}

/// Replay answering every fixture: shared coarse replies, then per-task
/// planner and final replies.
pub fn script_records() -> Vec<ScriptRecord> {
    let mut records = vec![
        ScriptRecord::ordinal(ModelRole::ChartSpec, 1, "bar, x=Company, y=[Revenue], title=\"Revenue by company\""),
        ScriptRecord::ordinal(ModelRole::VisionDescribe, 1, "The bars differ clearly in height; one category stands out."),
        ScriptRecord::ordinal(ModelRole::Knowledge, 1, "The rows describe named entities with numeric attributes."),
        ScriptRecord::ordinal(ModelRole::Summary, 1, "The numeric columns vary widely across rows."),
    ];
    for f in bundled() {
        for (i, reply) in f.planner.iter().enumerate() {
            records.push(ScriptRecord::ordinal(ModelRole::Planner, i + 1, *reply).for_task(f.id));
        }
        records.push(ScriptRecord::ordinal(ModelRole::FinalAnswer, 1, f.answer).for_task(f.id));
    }
    records
}

pub fn script_jsonl() -> String {
    script_records()
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

pub fn config_toml() -> String {
    format!(
        r#"# Offline run over the bundled fixtures: the coarse stage uses its
# deterministic fallbacks, planner and final answers come from the replay.
mode = "offline"
workers = 4

[providers.replay]
kind = "scripted"
script = "{SCRIPT_FILE}"
strict = true

[roles.default]
provider = "replay"
model = "replay"
"#
    )
}

/// Writes tasks, script and config into `dir`.
pub fn write_bundled(dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(TASKS_FILE), tasks_jsonl())?;
    std::fs::write(dir.join(SCRIPT_FILE), script_jsonl())?;
    std::fs::write(dir.join(CONFIG_FILE), config_toml())?;
    Ok(())
}
