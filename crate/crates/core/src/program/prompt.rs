//! Code-generation prompt assembly.
//!
//! The API text lives in a versioned asset split into sections by directive
//! lines:
//!
//! ```text
//! #@ version 1
//! #@ section NAME uses=method,function variants=task-agnostic,no-blip2
//! ```
//!
//! A section is emitted when every name in `uses` is bound for the variant
//! and the variant is listed (all variants when `variants` is omitted).
//! Directive lines never reach the model.

use std::sync::OnceLock;

use thiserror::Error;

use super::api::{ALL_FUNCTIONS, ALL_METHODS};
use super::{ApiVariant, Demo};
use crate::scoring::quoted_list;

pub const API_PROMPT: &str = include_str!("../../assets/api_prompt.txt");

/// Number of demonstrations a few-shot prompt takes.
pub const FEW_SHOT_DEMOS: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PromptError {
    #[error("malformed prompt asset: {0}")]
    Asset(String),
    #[error("few-shot prompts take exactly {FEW_SHOT_DEMOS} demonstrations, got {0}")]
    DemoCount(usize),
    #[error("demonstration {index} uses {name}, which the {variant} variant does not bind")]
    DemoUsesUnbound { index: usize, name: String, variant: ApiVariant },
    #[error("demonstration {0} must be a single execute_command definition")]
    DemoShape(usize),
    #[error("empty question")]
    EmptyQuestion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub uses: Vec<String>,
    pub variants: Option<Vec<ApiVariant>>,
    pub body: String,
}

impl Section {
    pub fn applies_to(&self, variant: ApiVariant) -> bool {
        let bound = |n: &String| variant.methods().contains(&n.as_str()) || variant.functions().contains(&n.as_str());
        self.uses.iter().all(bound) && self.variants.as_ref().is_none_or(|vs| vs.contains(&variant))
    }
}

/// Names of API methods and functions called in `text` (`name(` occurrences).
pub fn referenced_names(text: &str) -> Vec<&'static str> {
    ALL_METHODS
        .iter()
        .chain(ALL_FUNCTIONS)
        .filter(|n| {
            text.match_indices(&format!("{n}(")).any(|(i, _)| {
                // skip longer identifiers that merely end in the name
                !text[..i].chars().next_back().is_some_and(|c| c.is_alphanumeric() || c == '_')
            })
        })
        .copied()
        .collect()
}

/// Parses and checks an asset: a version line first, and every section
/// declares each API name it calls.
pub fn parse_asset(text: &str) -> Result<Vec<Section>, PromptError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(l) if l.starts_with("#@ version ") => {}
        _ => return Err(PromptError::Asset("first line must be a version directive".into())),
    }
    let mut sections: Vec<Section> = Vec::new();
    for line in lines {
        if let Some(rest) = line.strip_prefix("#@ section ") {
            let mut words = rest.split_whitespace();
            let name = words.next().ok_or_else(|| PromptError::Asset("section without a name".into()))?;
            let mut section = Section { name: name.to_string(), uses: Vec::new(), variants: None, body: String::new() };
            for w in words {
                if let Some(u) = w.strip_prefix("uses=") {
                    section.uses = u.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect();
                } else if let Some(v) = w.strip_prefix("variants=") {
                    let parsed = v
                        .split(',')
                        .map(|s| s.parse::<ApiVariant>().map_err(PromptError::Asset))
                        .collect::<Result<Vec<_>, _>>()?;
                    section.variants = Some(parsed);
                } else {
                    return Err(PromptError::Asset(format!("section {name}: unknown attribute {w:?}")));
                }
            }
            for u in &section.uses {
                if !ALL_METHODS.contains(&u.as_str()) && !ALL_FUNCTIONS.contains(&u.as_str()) {
                    return Err(PromptError::Asset(format!("section {name}: unknown name {u:?} in uses")));
                }
            }
            sections.push(section);
        } else if line.starts_with("#@") {
            return Err(PromptError::Asset(format!("unknown directive {line:?}")));
        } else {
            let Some(current) = sections.last_mut() else {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(PromptError::Asset("text before the first section".into()));
            };
            current.body.push_str(line);
            current.body.push('\n');
        }
    }
    for s in &sections {
        for n in referenced_names(&s.body) {
            if !s.uses.iter().any(|u| u == n) {
                return Err(PromptError::Asset(format!("section {} calls {n} without declaring it", s.name)));
            }
        }
    }
    Ok(sections)
}

fn builtin_sections() -> Result<&'static [Section], PromptError> {
    static SECTIONS: OnceLock<Result<Vec<Section>, PromptError>> = OnceLock::new();
    SECTIONS.get_or_init(|| parse_asset(API_PROMPT)).as_ref().map(Vec::as_slice).map_err(Clone::clone)
}

/// The API text for a variant, without demonstrations or the query.
pub fn api_text(variant: ApiVariant) -> Result<String, PromptError> {
    let mut out = String::new();
    for s in builtin_sections()?.iter().filter(|s| s.applies_to(variant)) {
        out.push_str(&s.body);
    }
    Ok(out)
}

/// The function signature the model continues from.
pub fn signature(choices: Option<&[String]>) -> String {
    match choices {
        Some(c) => format!("def execute_command(image, possible_choices={}) -> str:", quoted_list(c)),
        None => "def execute_command(image) -> str:".to_string(),
    }
}

fn comment(question: &str) -> String {
    let flat: Vec<&str> = question.split_whitespace().collect();
    format!("# {}", flat.join(" "))
}

/// Checks demonstrations against the variant; few-shot variants need
/// exactly three, other variants ignore them.
pub fn check_demos(variant: ApiVariant, demos: &[Demo]) -> Result<(), PromptError> {
    if !variant.is_few_shot() {
        return Ok(());
    }
    if demos.len() != FEW_SHOT_DEMOS {
        return Err(PromptError::DemoCount(demos.len()));
    }
    for (index, d) in demos.iter().enumerate() {
        let program = d.program.trim();
        let defs = program.lines().filter(|l| l.starts_with("def ")).count();
        if d.question.trim().is_empty() || !program.starts_with("def execute_command(") || defs != 1 {
            return Err(PromptError::DemoShape(index));
        }
        for name in referenced_names(program) {
            if !variant.methods().contains(&name) && !variant.functions().contains(&name) {
                return Err(PromptError::DemoUsesUnbound { index, name: name.to_string(), variant });
            }
        }
    }
    Ok(())
}

/// Everything before the per-question block: API text plus demonstrations.
pub fn prompt_prefix(variant: ApiVariant, demos: &[Demo]) -> Result<String, PromptError> {
    check_demos(variant, demos)?;
    let mut out = api_text(variant)?;
    if variant.is_few_shot() {
        for d in demos {
            out.push_str(&comment(&d.question));
            out.push('\n');
            out.push_str(d.program.trim_end());
            out.push_str("\n\n");
        }
    }
    Ok(out)
}

/// The per-question block: question comment, optional choices comment and
/// the signature.
pub fn question_block(question: &str, choices: Option<&[String]>) -> Result<String, PromptError> {
    if question.trim().is_empty() {
        return Err(PromptError::EmptyQuestion);
    }
    let mut out = comment(question);
    out.push('\n');
    if let Some(c) = choices {
        out.push_str(&format!("# possible answers : {}\n", quoted_list(c)));
    }
    out.push_str(&signature(choices));
    out.push('\n');
    Ok(out)
}

pub fn build_code_prompt(
    question: &str,
    choices: Option<&[String]>,
    variant: ApiVariant,
    demos: &[Demo],
) -> Result<String, PromptError> {
    let mut out = prompt_prefix(variant, demos)?;
    out.push_str(&question_block(question, choices)?);
    Ok(out)
}
