//! Task prompts and mark interleaving.
//!
//! The built-in templates live under `templates/` in this crate and can be
//! replaced file by file from a directory at runtime.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::render::{Manifest, MarkScheme};
use crate::task::TaskKind;

pub const TEMPLATE_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("{task} expects {expected}")]
    InputMismatch { task: TaskKind, expected: &'static str },
    #[error("{0} must not be empty")]
    EmptyInput(&'static str),
    #[error("placeholder {{{0}}} has no binding")]
    UnboundPlaceholder(String),
    #[error("region {0} has no mark in the manifest")]
    UnknownRegion(u32),
    #[error("mark {0:?} is not in the manifest")]
    UnknownMark(String),
    #[error("malformed template at byte {0}")]
    MalformedTemplate(usize),
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// What the task needs besides the marked image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskInputs {
    Vocabulary { names: Vec<String> },
    Expressions { expressions: Vec<String> },
    Grounding { caption: String, phrases: Vec<String> },
    /// Marks of the objects to follow, as drawn on the first frame.
    Tracking { marks: Vec<String> },
    Chat { text: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub task: TaskKind,
    pub text: String,
    pub referenced_marks: Vec<String>,
    /// Image slots in the order they are sent.
    pub attachments: Vec<String>,
    pub fresh_conversation: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub open_vocab_seg: String,
    pub referring: String,
    pub phrase_grounding: String,
    pub video_object_seg: String,
    pub format_hint: String,
}

impl Default for Templates {
    fn default() -> Self {
        let t = |s: &str| s.trim_end_matches(['\n', '\r']).to_string();
        Self {
            open_vocab_seg: t(include_str!("../templates/open_vocab_seg.txt")),
            referring: t(include_str!("../templates/referring.txt")),
            phrase_grounding: t(include_str!("../templates/phrase_grounding.txt")),
            video_object_seg: t(include_str!("../templates/video_object_seg.txt")),
            format_hint: t(include_str!("../templates/format_hint.txt")),
        }
    }
}

impl Templates {
    /// Built-ins, with any `<name>.txt` found in `dir` taking precedence.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut t = Self::default();
        let slots: [(&str, &mut String); 5] = [
            ("open_vocab_seg", &mut t.open_vocab_seg),
            ("referring", &mut t.referring),
            ("phrase_grounding", &mut t.phrase_grounding),
            ("video_object_seg", &mut t.video_object_seg),
            ("format_hint", &mut t.format_hint),
        ];
        for (name, slot) in slots {
            let path = dir.join(format!("{name}.txt"));
            match std::fs::read_to_string(&path) {
                Ok(s) => *slot = s.trim_end_matches(['\n', '\r']).to_string(),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(source) => {
                    return Err(PromptError::Io {
                        path: path.display().to_string(),
                        source,
                    })
                }
            }
        }
        Ok(t)
    }
}

fn id_kind(manifest: &Manifest) -> &'static str {
    match manifest.style.scheme() {
        MarkScheme::Numeric => "numeric",
        MarkScheme::Alphabetic => "alphabetic",
    }
}

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

fn non_empty(items: &[String], what: &'static str) -> Result<(), PromptError> {
    if items.is_empty() || items.iter().any(|s| s.trim().is_empty()) {
        return Err(PromptError::EmptyInput(what));
    }
    Ok(())
}

pub fn build_task_prompt(task: TaskKind, manifest: &Manifest, inputs: &TaskInputs) -> Result<PromptSpec, PromptError> {
    build_task_prompt_with(&Templates::default(), task, manifest, inputs)
}

pub fn build_task_prompt_with(
    templates: &Templates,
    task: TaskKind,
    manifest: &Manifest,
    inputs: &TaskInputs,
) -> Result<PromptSpec, PromptError> {
    let kind = id_kind(manifest);
    let mut referenced = Vec::new();
    let mut attachments = vec!["marked_image".to_string()];
    let text = match (task, inputs) {
        (TaskKind::OpenVocabSeg, TaskInputs::Vocabulary { names }) => {
            non_empty(names, "vocabulary")?;
            fill(
                &templates.open_vocab_seg,
                &[("id_kind", kind), ("vocabulary", &names.join(", "))],
            )
        }
        (TaskKind::ReferringSeg | TaskKind::ReferringComprehension, TaskInputs::Expressions { expressions }) => {
            non_empty(expressions, "referring expressions")?;
            fill(
                &templates.referring,
                &[("id_kind", kind), ("expressions", &expressions.join("; "))],
            )
        }
        (TaskKind::PhraseGrounding, TaskInputs::Grounding { caption, phrases }) => {
            non_empty(phrases, "phrases")?;
            if caption.trim().is_empty() {
                return Err(PromptError::EmptyInput("caption"));
            }
            fill(
                &templates.phrase_grounding,
                &[("id_kind", kind), ("caption", caption), ("phrases", &phrases.join(", "))],
            )
        }
        (TaskKind::VideoObjectSeg, TaskInputs::Tracking { marks }) => {
            non_empty(marks, "tracked marks")?;
            for m in marks {
                if manifest.region_for_mark(m).is_none() {
                    return Err(PromptError::UnknownMark(m.clone()));
                }
            }
            referenced = marks.clone();
            attachments = vec!["first_frame".to_string(), "later_frame".to_string()];
            let count = marks.len().to_string();
            fill(
                &templates.video_object_seg,
                &[("count", &count), ("marks", &marks.join(","))],
            )
        }
        (TaskKind::FreeChat, TaskInputs::Chat { text }) => text.clone(),
        (task, _) => {
            let expected = match task {
                TaskKind::OpenVocabSeg => "a vocabulary",
                TaskKind::ReferringSeg | TaskKind::ReferringComprehension => "referring expressions",
                TaskKind::PhraseGrounding => "a caption and phrases",
                TaskKind::VideoObjectSeg => "tracked marks",
                TaskKind::FreeChat => "chat text",
            };
            return Err(PromptError::InputMismatch { task, expected });
        }
    };
    Ok(PromptSpec {
        task,
        text,
        referenced_marks: referenced,
        attachments,
        fresh_conversation: true,
    })
}

/// Appends the one-answer-per-line request used by benchmark runs.
pub fn with_format_hint(mut spec: PromptSpec, templates: &Templates) -> PromptSpec {
    if spec.task != TaskKind::FreeChat && !templates.format_hint.is_empty() {
        spec.text.push(' ');
        spec.text.push_str(&templates.format_hint);
    }
    spec
}

enum Piece<'a> {
    Text(&'a str),
    Placeholder(&'a str),
}

fn tokenize(template: &str) -> Result<Vec<Piece<'_>>, PromptError> {
    let bytes = template.as_bytes();
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                pieces.push(Piece::Text(&template[start..=i]));
                i += 2;
                start = i;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                pieces.push(Piece::Text(&template[start..=i]));
                i += 2;
                start = i;
            }
            b'{' => {
                let end = template[i + 1..]
                    .find('}')
                    .map(|o| i + 1 + o)
                    .ok_or(PromptError::MalformedTemplate(i))?;
                let name = &template[i + 1..end];
                let valid = name
                    .chars()
                    .next()
                    .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
                    && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
                if !valid {
                    return Err(PromptError::MalformedTemplate(i));
                }
                pieces.push(Piece::Text(&template[start..i]));
                pieces.push(Piece::Placeholder(name));
                i = end + 1;
                start = i;
            }
            b'}' => return Err(PromptError::MalformedTemplate(i)),
            _ => i += 1,
        }
    }
    pieces.push(Piece::Text(&template[start..]));
    Ok(pieces)
}

/// Replaces `{name}` placeholders with the mark of the bound region.
/// `{{` and `}}` produce literal braces.
pub fn interleave_marks(
    template: &str,
    manifest: &Manifest,
    bindings: &BTreeMap<String, u32>,
) -> Result<PromptSpec, PromptError> {
    let mut text = String::with_capacity(template.len());
    let mut referenced = Vec::new();
    let mut seen = HashSet::new();
    for piece in tokenize(template)? {
        match piece {
            Piece::Text(t) => text.push_str(t),
            Piece::Placeholder(name) => {
                let region = *bindings
                    .get(name)
                    .ok_or_else(|| PromptError::UnboundPlaceholder(name.to_string()))?;
                let mark = manifest
                    .mark_for_region(region)
                    .ok_or(PromptError::UnknownRegion(region))?;
                text.push_str(mark);
                if seen.insert(mark.to_string()) {
                    referenced.push(mark.to_string());
                }
            }
        }
    }
    Ok(PromptSpec {
        task: TaskKind::FreeChat,
        text,
        referenced_marks: referenced,
        attachments: vec!["marked_image".to_string()],
        fresh_conversation: false,
    })
}
