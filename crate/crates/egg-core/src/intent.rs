//! Search intents and meta-prompt templates.
//!
//! An intent pairs a task with its query description `e_q` — the word that
//! tells the generator what kind of query the task expects ("Claim" for fact
//! checking, "Title" for citation prediction). Templates substitute `e_q` and
//! a document into fixed strings; rendering is pure and byte-exact, so prompt
//! tests can compare whole strings.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};

/// Broder-taxonomy category of the search need behind a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntentCategory {
    Informational,
    Navigational,
    Transactional,
    Mixed,
}

impl fmt::Display for IntentCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            IntentCategory::Informational => "Informational",
            IntentCategory::Navigational => "Navigational",
            IntentCategory::Transactional => "Transactional",
            IntentCategory::Mixed => "Mixed",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for IntentCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "informational" => Ok(IntentCategory::Informational),
            "navigational" => Ok(IntentCategory::Navigational),
            "transactional" => Ok(IntentCategory::Transactional),
            "mixed" => Ok(IntentCategory::Mixed),
            other => Err(Error::invalid(format!("unknown intent category `{other}`"))),
        }
    }
}

/// A task's search intent: its name, category, and query description `e_q`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentSpec {
    pub task_name: String,
    pub category: IntentCategory,
    pub e_q: String,
}

impl IntentSpec {
    pub fn new(task_name: impl Into<String>, category: IntentCategory, e_q: impl Into<String>) -> Result<Self> {
        let e_q = e_q.into();
        if e_q.is_empty() {
            return Err(Error::invalid("intent e_q must be non-empty"));
        }
        Ok(Self {
            task_name: task_name.into(),
            category,
            e_q,
        })
    }
}

/// Template a prompt was rendered from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    FlanMeta,
    LlamaPrototype,
    LlamaIcl,
}

/// A rendered prompt plus the template it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptString {
    pub text: String,
    pub kind: PromptKind,
}

/// The built-in intent catalog: the four underexplored-intent tasks plus the
/// conventional zero-shot intent whose query description is just "query".
pub fn builtin_intents() -> Vec<IntentSpec> {
    vec![
        IntentSpec::new("Fact Checking", IntentCategory::Transactional, "Claim").unwrap(),
        IntentSpec::new("Argument Retrieval", IntentCategory::Transactional, "Argument").unwrap(),
        IntentSpec::new("Citation Prediction", IntentCategory::Navigational, "Title").unwrap(),
        IntentSpec::new("Entity Retrieval", IntentCategory::Mixed, "Entity").unwrap(),
        IntentSpec::new("zero-shot", IntentCategory::Informational, "query").unwrap(),
    ]
}

/// Look an intent up by task name or by its `e_q`, case-insensitively.
pub fn find_intent<'a>(catalog: &'a [IntentSpec], name: &str) -> Option<&'a IntentSpec> {
    catalog
        .iter()
        .find(|i| i.task_name == name || i.e_q == name)
        .or_else(|| {
            catalog
                .iter()
                .find(|i| i.task_name.eq_ignore_ascii_case(name) || i.e_q.eq_ignore_ascii_case(name))
        })
}

#[derive(Debug, Deserialize)]
struct CatalogEntry {
    intent_category: String,
    e_q: String,
}

/// Load an intent catalog from a TOML or JSON file mapping
/// `task_name -> { intent_category, e_q }`. Entries come back sorted by task
/// name so catalog order is stable.
pub fn load_intent_catalog(path: impl AsRef<Path>) -> Result<Vec<IntentSpec>> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let entries: BTreeMap<String, CatalogEntry> = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&raw)
            .map_err(|e| Error::parse(path, 0, format!("invalid intent catalog: {e}")))?,
        _ => toml::from_str(&raw)
            .map_err(|e| Error::parse(path, 0, format!("invalid intent catalog: {e}")))?,
    };
    entries
        .into_iter()
        .map(|(task, entry)| IntentSpec::new(task, entry.intent_category.parse()?, entry.e_q))
        .collect()
}

fn require_text(doc: &Document) -> Result<String> {
    if doc.text.is_empty() {
        return Err(Error::invalid(format!("document `{}` has empty text", doc.doc_id)));
    }
    Ok(doc.presented_text())
}

/// Render the instruction-following meta-prompt:
/// `Write a {e_q} related to topic of the passage. Do not directly use
/// wordings from the passage. {d}`
pub fn render_flan_prompt(intent: &IntentSpec, doc: &Document) -> Result<PromptString> {
    let d = require_text(doc)?;
    Ok(PromptString {
        text: format!(
            "Write a {} related to topic of the passage. Do not directly use wordings from the passage. {}",
            intent.e_q, d
        ),
        kind: PromptKind::FlanMeta,
    })
}

/// Render the chat-style prototype prompt:
/// `[INST] Read the passage and generate a {e_q}. [/INST] {d} {e_q}:`
pub fn render_prototype_prompt(intent: &IntentSpec, doc: &Document) -> Result<PromptString> {
    let d = require_text(doc)?;
    Ok(PromptString {
        text: format!(
            "[INST] Read the passage and generate a {}. [/INST] {} {}:",
            intent.e_q, d, intent.e_q
        ),
        kind: PromptKind::LlamaPrototype,
    })
}

/// Separator between in-context blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IclSeparator {
    #[default]
    Space,
    Newline,
}

impl IclSeparator {
    fn as_str(self) -> &'static str {
        match self {
            IclSeparator::Space => " ",
            IclSeparator::Newline => "\n",
        }
    }
}

/// Render the in-context prompt with single-space block separation:
/// `Passage: {d_1} {e_q}: {q_1} ... Passage: {d_M} {e_q}: {q_M}
/// Passage: {d_target} {e_q}:`
pub fn render_icl_prompt(
    intent: &IntentSpec,
    examples: &[(&Document, &str)],
    target: &Document,
) -> Result<PromptString> {
    render_icl_prompt_with(intent, examples, target, IclSeparator::Space)
}

/// [`render_icl_prompt`] with a configurable block separator.
pub fn render_icl_prompt_with(
    intent: &IntentSpec,
    examples: &[(&Document, &str)],
    target: &Document,
    separator: IclSeparator,
) -> Result<PromptString> {
    if examples.is_empty() {
        return Err(Error::invalid("in-context prompt requires at least one example"));
    }
    if let Some((doc, _)) = examples.iter().find(|(doc, _)| doc.doc_id == target.doc_id) {
        return Err(Error::invalid(format!(
            "target document `{}` appears among its own in-context examples",
            doc.doc_id
        )));
    }
    let sep = separator.as_str();
    let mut blocks = Vec::with_capacity(examples.len() + 1);
    for (doc, query) in examples {
        let d = require_text(doc)?;
        blocks.push(format!("Passage: {} {}: {}", d, intent.e_q, query));
    }
    blocks.push(format!("Passage: {} {}:", require_text(target)?, intent.e_q));
    Ok(PromptString {
        text: blocks.join(sep),
        kind: PromptKind::LlamaIcl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> Document {
        Document::new(id, "", text)
    }

    #[test]
    fn builtin_catalog_rows() {
        let intents = builtin_intents();
        assert_eq!(intents.len(), 5);
        assert_eq!(
            intents[0],
            IntentSpec::new("Fact Checking", IntentCategory::Transactional, "Claim").unwrap()
        );
        assert_eq!(
            intents[1],
            IntentSpec::new("Argument Retrieval", IntentCategory::Transactional, "Argument").unwrap()
        );
        assert_eq!(
            intents[2],
            IntentSpec::new("Citation Prediction", IntentCategory::Navigational, "Title").unwrap()
        );
        assert_eq!(
            intents[3],
            IntentSpec::new("Entity Retrieval", IntentCategory::Mixed, "Entity").unwrap()
        );
        assert_eq!(
            intents[4],
            IntentSpec::new("zero-shot", IntentCategory::Informational, "query").unwrap()
        );
    }

    #[test]
    fn find_intent_by_name_or_eq() {
        let intents = builtin_intents();
        assert_eq!(find_intent(&intents, "Fact Checking").unwrap().e_q, "Claim");
        assert_eq!(find_intent(&intents, "Claim").unwrap().task_name, "Fact Checking");
        assert_eq!(find_intent(&intents, "claim").unwrap().task_name, "Fact Checking");
        assert!(find_intent(&intents, "nope").is_none());
    }

    #[test]
    fn flan_prompt_is_byte_exact() {
        let intent = IntentSpec::new("Fact Checking", IntentCategory::Transactional, "Claim").unwrap();
        let prompt = render_flan_prompt(&intent, &doc("d1", "Paris is in France.")).unwrap();
        assert_eq!(
            prompt.text,
            "Write a Claim related to topic of the passage. Do not directly use wordings from the passage. Paris is in France."
        );
        assert_eq!(prompt.kind, PromptKind::FlanMeta);
    }

    #[test]
    fn flan_prompt_zero_shot_substitutes_query() {
        let intent = IntentSpec::new("zero-shot", IntentCategory::Informational, "query").unwrap();
        let prompt = render_flan_prompt(&intent, &doc("d1", "x")).unwrap();
        assert_eq!(
            prompt.text,
            "Write a query related to topic of the passage. Do not directly use wordings from the passage. x"
        );
    }

    #[test]
    fn flan_prompt_rejects_empty_text() {
        let intent = IntentSpec::new("Citation Prediction", IntentCategory::Navigational, "Title").unwrap();
        assert!(render_flan_prompt(&intent, &doc("d1", "")).is_err());
    }

    #[test]
    fn flan_prompt_uses_title_presentation() {
        let intent = IntentSpec::new("Fact Checking", IntentCategory::Transactional, "Claim").unwrap();
        let prompt = render_flan_prompt(&intent, &Document::new("d1", "T", "x")).unwrap();
        assert!(prompt.text.ends_with("from the passage. T. x"));
    }

    #[test]
    fn prototype_prompt_is_byte_exact() {
        let intent = IntentSpec::new("Argument Retrieval", IntentCategory::Transactional, "Argument").unwrap();
        let prompt = render_prototype_prompt(&intent, &doc("d1", "D")).unwrap();
        assert_eq!(prompt.text, "[INST] Read the passage and generate a Argument. [/INST] D Argument:");
        assert_eq!(prompt.kind, PromptKind::LlamaPrototype);
    }

    #[test]
    fn prototype_prompt_structure() {
        let intent = IntentSpec::new("Entity Retrieval", IntentCategory::Mixed, "Entity").unwrap();
        let prompt = render_prototype_prompt(&intent, &doc("d1", "E")).unwrap();
        assert_eq!(prompt.text.matches("[INST]").count(), 1);
        assert_eq!(prompt.text.matches("[/INST]").count(), 1);
        assert!(prompt.text.ends_with("Entity:"));
    }

    #[test]
    fn icl_prompt_single_example() {
        let intent = IntentSpec::new("Citation Prediction", IntentCategory::Navigational, "Title").unwrap();
        let a = doc("a", "dA");
        let b = doc("b", "dB");
        let prompt = render_icl_prompt(&intent, &[(&a, "qA")], &b).unwrap();
        assert_eq!(prompt.text, "Passage: dA Title: qA Passage: dB Title:");
        assert_eq!(prompt.kind, PromptKind::LlamaIcl);
    }

    #[test]
    fn icl_prompt_block_counts() {
        let intent = IntentSpec::new("Citation Prediction", IntentCategory::Navigational, "Title").unwrap();
        let docs: Vec<Document> = (0..4).map(|i| doc(&format!("e{i}"), &format!("body{i}"))).collect();
        let examples: Vec<(&Document, &str)> = docs.iter().map(|d| (d, "q")).collect();
        let target = doc("t", "tbody");
        let prompt = render_icl_prompt(&intent, &examples, &target).unwrap();
        assert_eq!(prompt.text.matches("Passage:").count(), 5);
        assert_eq!(prompt.text.matches("Title:").count(), 5);
        assert!(prompt.text.ends_with("Title:"));
    }

    #[test]
    fn icl_prompt_rejects_empty_examples() {
        let intent = IntentSpec::new("Citation Prediction", IntentCategory::Navigational, "Title").unwrap();
        assert!(render_icl_prompt(&intent, &[], &doc("t", "x")).is_err());
    }

    #[test]
    fn icl_prompt_rejects_target_among_examples() {
        let intent = IntentSpec::new("Citation Prediction", IntentCategory::Navigational, "Title").unwrap();
        let a = doc("a", "dA");
        let target = doc("a", "dA");
        assert!(render_icl_prompt(&intent, &[(&a, "qA")], &target).is_err());
    }

    #[test]
    fn icl_newline_separator() {
        let intent = IntentSpec::new("Citation Prediction", IntentCategory::Navigational, "Title").unwrap();
        let a = doc("a", "dA");
        let b = doc("b", "dB");
        let prompt = render_icl_prompt_with(&intent, &[(&a, "qA")], &b, IclSeparator::Newline).unwrap();
        assert_eq!(prompt.text, "Passage: dA Title: qA\nPassage: dB Title:");
    }

    #[test]
    fn flan_length_identity() {
        // len(prompt) == len(template constant) + len(e_q) + len(d)
        let constant = "Write a ".len() + " related to topic of the passage. Do not directly use wordings from the passage. ".len();
        for (e_q, text) in [("Claim", "short doc"), ("Title", "a much longer document body here")] {
            let intent = IntentSpec::new("t", IntentCategory::Mixed, e_q).unwrap();
            let prompt = render_flan_prompt(&intent, &doc("d", text)).unwrap();
            assert_eq!(prompt.text.len(), constant + e_q.len() + text.len());
        }
    }

    #[test]
    fn catalog_loads_from_toml_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("intents.toml");
        std::fs::write(
            &toml_path,
            "[\"My Task\"]\nintent_category = \"Navigational\"\ne_q = \"Heading\"\n",
        )
        .unwrap();
        let loaded = load_intent_catalog(&toml_path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].e_q, "Heading");
        assert_eq!(loaded[0].category, IntentCategory::Navigational);

        let json_path = dir.path().join("intents.json");
        std::fs::write(
            &json_path,
            "{\"My Task\": {\"intent_category\": \"mixed\", \"e_q\": \"Thing\"}}",
        )
        .unwrap();
        let loaded = load_intent_catalog(&json_path).unwrap();
        assert_eq!(loaded[0].category, IntentCategory::Mixed);
    }

    #[test]
    fn catalog_rejects_empty_eq() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("intents.toml");
        std::fs::write(&path, "[\"Bad\"]\nintent_category = \"Mixed\"\ne_q = \"\"\n").unwrap();
        assert!(load_intent_catalog(&path).is_err());
    }
}
