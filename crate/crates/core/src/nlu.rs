//! Lexicon-based intent extraction for typed user utterances.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::ColorPalette;
use crate::scene::ObjectClass;

const VERBS: [&str; 10] = [
    "take", "grasp", "get", "pick", "give", "hand", "put", "place", "grab", "fetch",
];
const AFFIRMATIONS: [&str; 6] = ["yes", "yeah", "yep", "sure", "ok", "okay"];
const QUIT_WORDS: [&str; 3] = ["stop", "quit", "goodbye"];
const DENY_WORD: &str = "no";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LexiconError {
    #[error("malformed lexicon document: {0}")]
    Parse(String),
    #[error("lexicon set {0} is empty")]
    Empty(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicons {
    pub verbs: BTreeSet<String>,
    pub nouns: BTreeSet<String>,
    pub colors: BTreeSet<String>,
    pub affirmations: BTreeSet<String>,
}

impl Default for Lexicons {
    fn default() -> Self {
        let set = |it: &mut dyn Iterator<Item = &str>| it.map(str::to_lowercase).collect();
        Self {
            verbs: set(&mut VERBS.into_iter()),
            nouns: set(&mut ObjectClass::ALL.iter().map(|c| c.as_str())),
            colors: set(&mut ColorPalette::default().names()),
            affirmations: set(&mut AFFIRMATIONS.into_iter()),
        }
    }
}

/// Optional overrides; any omitted set keeps its default.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconDoc {
    verbs: Option<Vec<String>>,
    nouns: Option<Vec<String>>,
    colors: Option<Vec<String>>,
    affirmations: Option<Vec<String>>,
}

impl Lexicons {
    pub fn from_json(text: &str) -> Result<Self, LexiconError> {
        let doc: LexiconDoc = serde_json::from_str(text).map_err(|e| LexiconError::Parse(e.to_string()))?;
        let mut lex = Lexicons::default();
        let norm = |v: Vec<String>| v.into_iter().map(|s| s.trim().to_lowercase()).filter(|s| !s.is_empty()).collect();
        if let Some(v) = doc.verbs {
            lex.verbs = norm(v);
        }
        if let Some(v) = doc.nouns {
            lex.nouns = norm(v);
        }
        if let Some(v) = doc.colors {
            lex.colors = norm(v);
        }
        if let Some(v) = doc.affirmations {
            lex.affirmations = norm(v);
        }
        for (name, set) in [
            ("verbs", &lex.verbs),
            ("nouns", &lex.nouns),
            ("colors", &lex.colors),
            ("affirmations", &lex.affirmations),
        ] {
            if set.is_empty() {
                return Err(LexiconError::Empty(name));
            }
        }
        Ok(lex)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum IntentKind {
    Retrieve(String),
    ColorRequest(String),
    Affirm,
    Deny,
    Quit,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intent {
    pub kind: IntentKind,
    pub tokens: Vec<String>,
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| c.is_whitespace() || (c.is_ascii_punctuation() && c != '\''))
        .map(|t| t.trim_matches('\'').to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn parse_intent(text: &str, lex: &Lexicons) -> Intent {
    let tokens = tokenize(text);
    let kind = classify(&tokens, lex);
    Intent { kind, tokens }
}

fn classify(tokens: &[String], lex: &Lexicons) -> IntentKind {
    if tokens.first().is_some_and(|t| lex.affirmations.contains(t)) {
        return IntentKind::Affirm;
    }
    if tokens.iter().any(|t| t == DENY_WORD) {
        return IntentKind::Deny;
    }
    if tokens.iter().any(|t| QUIT_WORDS.contains(&t.as_str())) {
        return IntentKind::Quit;
    }
    if tokens.iter().any(|t| lex.verbs.contains(t)) {
        if let Some(noun) = tokens.iter().find(|t| lex.nouns.contains(*t)) {
            return IntentKind::Retrieve(noun.clone());
        }
    }
    if let Some(color) = tokens.iter().find(|t| lex.colors.contains(*t)) {
        return IntentKind::ColorRequest(color.clone());
    }
    IntentKind::Unknown
}
