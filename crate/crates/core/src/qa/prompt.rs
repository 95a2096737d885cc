use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::QaError;
use crate::corpus::{Corpus, PageKey, Question};
use crate::dense::truncate_chars;
use crate::retrieval::RetrievalResult;

const BUILTIN_UK: &str = include_str!("../../templates/uk.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    Base,
    RetryInstructions,
    RephrasedQuery,
    /// No retrieved context at all.
    LlmOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplates {
    pub name: String,
    pub version: u32,
    pub system: String,
    pub instruction: String,
    pub llm_only_instruction: String,
    pub context_header: String,
    pub page_header: String,
    pub question_header: String,
    pub options_header: String,
    pub answer_directive: String,
    pub retry_block: String,
    pub rephrase_system: String,
}

impl PromptTemplates {
    pub fn builtin(name: &str) -> Result<Self, QaError> {
        match name {
            "uk" => Self::parse(BUILTIN_UK),
            other => Err(QaError::Template(format!("no built-in template set {other:?}"))),
        }
    }

    /// Loads `<dir>/<name>.toml`.
    pub fn load(dir: impl AsRef<Path>, name: &str) -> Result<Self, QaError> {
        let path = dir.as_ref().join(format!("{name}.toml"));
        let text = fs::read_to_string(&path)
            .map_err(|e| QaError::Template(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, QaError> {
        let t: Self = toml::from_str(text).map_err(|e| QaError::Template(e.to_string()))?;
        if t.system.trim().is_empty() || t.answer_directive.trim().is_empty() {
            return Err(QaError::Template("system and answer_directive must be set".into()));
        }
        Ok(t)
    }

    fn page_header(&self, key: &PageKey) -> String {
        self.page_header
            .replace("{doc_id}", &key.doc_id)
            .replace("{page}", &key.page_number.to_string())
    }
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::builtin("uk").expect("built-in template set parses")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_prompt: String,
    pub user_prompt: String,
    pub context_pages_used: Vec<PageKey>,
}

/// Renders the answer prompt:
///
/// ```text
/// <instruction>
///
/// <context header>
/// [doc, стор. N]
/// <page text>
/// ...
///
/// <question header> <question>
///
/// <options header>
/// A. ...
/// B. ...
///
/// <answer directive>
/// [<retry block>]
/// ```
pub fn build_prompt(
    question: &Question,
    context: &RetrievalResult,
    corpus: &Corpus,
    n_context: usize,
    variant: PromptVariant,
    templates: &PromptTemplates,
    page_char_budget: usize,
) -> Result<PromptBundle, QaError> {
    let mut user = String::new();
    let mut used = Vec::new();
    if variant == PromptVariant::LlmOnly {
        user.push_str(&templates.llm_only_instruction);
        user.push_str("\n\n");
    } else {
        if context.is_empty() || n_context == 0 {
            return Err(QaError::EmptyContext);
        }
        user.push_str(&templates.instruction);
        user.push_str("\n\n");
        user.push_str(&templates.context_header);
        user.push('\n');
        for entry in context.entries.iter().take(n_context) {
            let page = corpus
                .get(&entry.key)
                .ok_or_else(|| QaError::MissingPage(entry.key.clone()))?;
            user.push_str(&templates.page_header(&entry.key));
            user.push('\n');
            user.push_str(truncate_chars(page.text.trim(), page_char_budget).trim_end());
            user.push_str("\n\n");
            used.push(entry.key.clone());
        }
    }
    let _ = writeln!(user, "{} {}", templates.question_header, question.text.trim());
    user.push('\n');
    user.push_str(&templates.options_header);
    user.push('\n');
    for opt in &question.options {
        let _ = writeln!(user, "{}. {}", opt.label, opt.text.trim());
    }
    user.push('\n');
    user.push_str(&templates.answer_directive);
    if variant == PromptVariant::RetryInstructions {
        user.push('\n');
        user.push_str(&templates.retry_block);
    }
    user.push('\n');
    Ok(PromptBundle {
        system_prompt: templates.system.clone(),
        user_prompt: user,
        context_pages_used: used,
    })
}

/// System and user prompt asking the model to reformulate the question.
pub fn rephrase_prompt(question: &Question, templates: &PromptTemplates) -> (String, String) {
    (templates.rephrase_system.clone(), question.text.trim().to_string())
}
