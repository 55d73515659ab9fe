//! Chain-of-thought prompt templates with `{{name}}` placeholders.

use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::knowledge_base::RetrievedKnowledge;

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("template `{template}` is missing placeholder {{{{{name}}}}}")]
    MissingPlaceholder { template: &'static str, name: &'static str },
    #[error("template `{template}` uses unknown placeholder {{{{{name}}}}}")]
    UnknownPlaceholder { template: &'static str, name: String },
    #[error("no value supplied for placeholder {{{{{0}}}}}")]
    Unfilled(String),
    #[error("cannot read template {0}: {1}")]
    Io(String, String),
}

/// Template names, their file names, and the placeholders each accepts.
/// The first list is required, the second optional.
const SPECS: [(&str, &[&str], &[&str]); 5] = [
    ("describe", &[], &["frame_count", "scene_id"]),
    ("extract_normal", &["descriptions"], &["scene_id"]),
    ("predict_abnormal", &["normal_patterns"], &["scene_id"]),
    ("assess", &["description", "knowledge"], &["scene_id"]),
    ("aggregate", &["patterns"], &["scene_id"]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub describe: String,
    pub extract_normal: String,
    pub predict_abnormal: String,
    pub assess: String,
    pub aggregate: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            describe: include_str!("../../templates/describe.txt").to_string(),
            extract_normal: include_str!("../../templates/extract_normal.txt").to_string(),
            predict_abnormal: include_str!("../../templates/predict_abnormal.txt").to_string(),
            assess: include_str!("../../templates/assess.txt").to_string(),
            aggregate: include_str!("../../templates/aggregate.txt").to_string(),
        }
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}").unwrap())
}

impl PromptTemplates {
    /// Loads `<name>.txt` files from `dir`; files that are absent keep the
    /// built-in text.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut t = Self::default();
        for (name, _, _) in SPECS {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| TemplateError::Io(path.display().to_string(), e.to_string()))?;
                *t.slot_mut(name) = text;
            }
        }
        t.validate()?;
        Ok(t)
    }

    fn slot_mut(&mut self, name: &str) -> &mut String {
        match name {
            "describe" => &mut self.describe,
            "extract_normal" => &mut self.extract_normal,
            "predict_abnormal" => &mut self.predict_abnormal,
            "assess" => &mut self.assess,
            _ => &mut self.aggregate,
        }
    }

    fn slot(&self, name: &str) -> &str {
        match name {
            "describe" => &self.describe,
            "extract_normal" => &self.extract_normal,
            "predict_abnormal" => &self.predict_abnormal,
            "assess" => &self.assess,
            _ => &self.aggregate,
        }
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        for (template, required, optional) in SPECS {
            let text = self.slot(template);
            let used: Vec<String> = placeholder_re()
                .captures_iter(text)
                .map(|c| c[1].to_string())
                .collect();
            for name in required {
                if !used.iter().any(|u| u == name) {
                    return Err(TemplateError::MissingPlaceholder { template, name });
                }
            }
            if let Some(bad) = used
                .iter()
                .find(|u| !required.contains(&u.as_str()) && !optional.contains(&u.as_str()))
            {
                return Err(TemplateError::UnknownPlaceholder {
                    template,
                    name: bad.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Substitutes every `{{name}}`; a placeholder without a value is an error.
pub fn render(template: &str, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
    let mut missing = None;
    let out = placeholder_re().replace_all(template, |c: &regex::Captures| {
        let name = &c[1];
        match vars.iter().find(|(k, _)| *k == name) {
            Some((_, v)) => v.to_string(),
            None => {
                missing.get_or_insert_with(|| name.to_string());
                String::new()
            }
        }
    });
    match missing {
        Some(name) => Err(TemplateError::Unfilled(name)),
        None => Ok(out.into_owned()),
    }
}

/// One enumerated `[label] pattern` line per retrieved item.
pub fn format_knowledge(knowledge: &RetrievedKnowledge) -> String {
    if knowledge.items.is_empty() {
        return "(no retrieved knowledge)".to_string();
    }
    knowledge
        .items
        .iter()
        .enumerate()
        .map(|(i, item)| format!("{}. [{}] {}", i + 1, item.pattern.label, item.pattern.text))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn format_list(items: &[String]) -> String {
    items
        .iter()
        .map(|s| format!("- {s}"))
        .collect::<Vec<_>>()
        .join("\n")
}
