//! Versioned prompt templates.
//!
//! A template set is a directory holding a `VERSION` file, one `<name>.txt`
//! per prompt, and optional `<name>.fewshot` demonstrations that fill the
//! `{FEWSHOT}` placeholder. Placeholders are `{UPPER_CASE}` names; values are
//! substituted in a single pass, so placeholder-like text inside a table or
//! question is never expanded.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

pub const CHART: &str = "chart";
pub const VISUAL: &str = "visual";
pub const SEMANTIC: &str = "semantic";
pub const SUMMARY: &str = "summary";
pub const PLANNER: &str = "planner";
pub const FINAL: &str = "final";
pub const FINAL_FACT: &str = "final_fact";

const REQUIRED: [&str; 7] = [CHART, VISUAL, SEMANTIC, SUMMARY, PLANNER, FINAL, FINAL_FACT];

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("reading templates: {0}")]
    Io(#[from] std::io::Error),
    #[error("template set is missing `{0}.txt`")]
    Missing(String),
    #[error("template set has no VERSION file")]
    NoVersion,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    version: String,
    templates: BTreeMap<String, String>,
    fewshot: BTreeMap<String, String>,
}

macro_rules! builtin {
    ($($name:literal),*) => {
        [$(($name, include_str!(concat!("../templates/cfms-v1/", $name, ".txt")))),*]
    };
}

impl TemplateSet {
    /// The bundled `cfms-v1` set.
    pub fn builtin() -> TemplateSet {
        let templates = builtin!("chart", "visual", "semantic", "summary", "planner", "final", "final_fact");
        let fewshot = [
            ("chart", include_str!("../templates/cfms-v1/chart.fewshot")),
            ("semantic", include_str!("../templates/cfms-v1/semantic.fewshot")),
            ("planner", include_str!("../templates/cfms-v1/planner.fewshot")),
        ];
        TemplateSet {
            version: include_str!("../templates/cfms-v1/VERSION").trim().to_string(),
            templates: templates
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            fewshot: fewshot
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    pub fn load(dir: &Path) -> Result<TemplateSet, TemplateError> {
        let version = std::fs::read_to_string(dir.join("VERSION"))
            .map_err(|_| TemplateError::NoVersion)?
            .trim()
            .to_string();
        let mut templates = BTreeMap::new();
        let mut fewshot = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let (Some(stem), Some(ext)) = (
                path.file_stem().and_then(|s| s.to_str()),
                path.extension().and_then(|s| s.to_str()),
            ) else {
                continue;
            };
            match ext {
                "txt" => {
                    templates.insert(stem.to_string(), std::fs::read_to_string(&path)?);
                }
                "fewshot" => {
                    fewshot.insert(stem.to_string(), std::fs::read_to_string(&path)?);
                }
                _ => {}
            }
        }
        for name in REQUIRED {
            if !templates.contains_key(name) {
                return Err(TemplateError::Missing(name.to_string()));
            }
        }
        Ok(TemplateSet {
            version,
            templates,
            fewshot,
        })
    }

    /// Writes the set to `dir` in the layout [`TemplateSet::load`] reads.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("VERSION"), format!("{}\n", self.version))?;
        for (k, v) in &self.templates {
            std::fs::write(dir.join(format!("{k}.txt")), v)?;
        }
        for (k, v) in &self.fewshot {
            std::fs::write(dir.join(format!("{k}.fewshot")), v)?;
        }
        Ok(())
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn fewshot(&self, name: &str) -> &str {
        self.fewshot.get(name).map(String::as_str).unwrap_or("")
    }

    /// Renders template `name`. `{FEWSHOT}` defaults to the template's
    /// demonstrations; unknown placeholders are left as written.
    pub fn render(&self, name: &str, values: &[(&str, &str)]) -> String {
        let template = self
            .templates
            .get(name)
            .unwrap_or_else(|| panic!("template `{name}` is not in set {}", self.version));
        substitute(template, |key| {
            values
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .or_else(|| (key == "FEWSHOT").then(|| self.fewshot(name)))
        })
    }
}

fn substitute<'v>(template: &str, lookup: impl Fn(&str) -> Option<&'v str>) -> String {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let key_len = after
            .find(|c: char| !(c.is_ascii_uppercase() || c == '_'))
            .unwrap_or(after.len());
        if key_len > 0 && after[key_len..].starts_with('}') {
            let key = &after[..key_len];
            if let Some(v) = lookup(key) {
                out.push_str(v);
                rest = &after[key_len + 1..];
                continue;
            }
        }
        out.push('{');
        rest = after;
    }
    out.push_str(rest);
    out
}
