//! Turning a model answer into mark mentions and region triplets.
//!
//! Passes run in order and each later pass only adds marks that earlier
//! ones did not find:
//!
//! 1. strict lines: `mark: text`, `text: mark`, `text: m1, m2, and m3`,
//!    `Text (mark): ...`
//! 2. enumerations: `1. text 2. text`
//! 3. lenient: a mark shortly after a cue word such as `labeled` or `#`
//!
//! Only marks present in the manifest are ever reported.

use std::collections::HashSet;
use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::RegionSet;
use crate::render::Manifest;
use crate::task::TaskKind;

/// Cue must end at most this many bytes before the mark.
pub const CUE_WINDOW: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkMention {
    pub mark_text: String,
    pub payload: String,
    /// Byte range of the mark inside the response.
    pub span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub region_id: u32,
    pub mark_text: String,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundedAnswer {
    pub raw: String,
    pub mentions: Vec<MarkMention>,
    pub triplets: Vec<Triplet>,
    /// Mentions whose mark is not in the manifest.
    pub dropped_unknown: usize,
}

impl GroundedAnswer {
    pub fn region_ids(&self) -> Vec<u32> {
        let mut seen = HashSet::new();
        self.triplets
            .iter()
            .filter(|t| seen.insert(t.region_id))
            .map(|t| t.region_id)
            .collect()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BindError {
    #[error("manifest does not describe this region set: {0}")]
    ManifestMismatch(String),
}

struct Grammar {
    marks: HashSet<String>,
    token: Regex,
    line_start: Regex,
    parenthetical: Regex,
    inline: Regex,
    list_tail: Regex,
    enumeration: Regex,
    vos_pair: Regex,
}

static CUE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:labell?ed|elements?|ids?|numbers?|regions?)\b|#").unwrap());
static COPULA: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"^["'”)\]]*\s*(?:appears to be|seems to be|looks like|corresponds to|is|are)\s+([^.;!?\n]+)"#).unwrap()
});
static QUOTED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"["“]([^"“”]+)["”]"#).unwrap());

impl Grammar {
    fn new(manifest: &Manifest) -> Option<Self> {
        let mut marks: Vec<&str> = manifest.mark_texts();
        if marks.is_empty() {
            return None;
        }
        marks.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        let alt = marks.iter().map(|m| regex::escape(m)).collect::<Vec<_>>().join("|");
        let m = format!(r"\b(?:{alt})\b");
        let re = |s: String| Regex::new(&s).expect("grammar regex");
        Some(Self {
            marks: marks.iter().map(|s| s.to_string()).collect(),
            token: re(m.clone()),
            line_start: re(format!(r#"^\s*(?:[-*•]\s*)?(?:\*\*)?["']?({m})["']?(?:\*\*)?\s*:\s*(.*)$"#)),
            parenthetical: re(format!(r"^\s*(?:[-*•]\s*)?(?:\*\*)?(.+?)\s*\(\{{?({m})\}}?\)(?:\*\*)?\s*:")),
            inline: re(format!(r#":\s*["']?({m})["']?"#)),
            list_tail: re(format!(r#"^(?:\s*,\s*(?:and\s+)?|\s+and\s+)["']?({m})["']?"#)),
            enumeration: re(format!(r"(?:^|\s)({m})\.\s+")),
            vos_pair: re(format!(r"(?i)labell?ed with\s+({m})\b.*?labell?ed with\s+({m})\b")),
        })
    }
}

fn clean_payload(s: &str) -> String {
    s.trim()
        .trim_end_matches(['.', ',', ';', ':'])
        .trim_matches(|c: char| c == '*' || c.is_whitespace())
        .to_string()
}

/// Lines of `text` with their byte offsets.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut offset = 0;
    text.split_inclusive('\n').map(move |l| {
        let start = offset;
        offset += l.len();
        (start, l.trim_end_matches(['\n', '\r']))
    })
}

fn strict_pass(g: &Grammar, text: &str) -> Vec<MarkMention> {
    let mut out = Vec::new();
    for (base, line) in lines(text) {
        if let Some(c) = g.parenthetical.captures(line) {
            let mk = c.get(2).unwrap();
            out.push(MarkMention {
                mark_text: mk.as_str().to_string(),
                payload: clean_payload(&c[1]),
                span: base + mk.start()..base + mk.end(),
            });
            continue;
        }
        if let Some(c) = g.line_start.captures(line) {
            let mk = c.get(1).unwrap();
            out.push(MarkMention {
                mark_text: mk.as_str().to_string(),
                payload: clean_payload(&c[2]),
                span: base + mk.start()..base + mk.end(),
            });
            continue;
        }
        let mut boundary = 0;
        let mut pos = 0;
        while let Some(c) = g.inline.captures_at(line, pos) {
            let whole = c.get(0).unwrap();
            let colon = whole.start();
            let from = line[..colon].rfind(':').map(|i| i + 1).unwrap_or(0).max(boundary);
            let payload = clean_payload(&line[from..colon]);
            let mk = c.get(1).unwrap();
            out.push(MarkMention {
                mark_text: mk.as_str().to_string(),
                payload: payload.clone(),
                span: base + mk.start()..base + mk.end(),
            });
            let mut end = whole.end();
            while let Some(t) = g.list_tail.captures(&line[end..]) {
                let mk = t.get(1).unwrap();
                out.push(MarkMention {
                    mark_text: mk.as_str().to_string(),
                    payload: payload.clone(),
                    span: base + end + mk.start()..base + end + mk.end(),
                });
                end += t.get(0).unwrap().end();
            }
            boundary = end;
            pos = end;
        }
    }
    out
}

fn enumeration_pass(g: &Grammar, text: &str) -> Vec<MarkMention> {
    let mut out = Vec::new();
    for (base, line) in lines(text) {
        let hits: Vec<_> = g
            .enumeration
            .captures_iter(line)
            .map(|c| (c.get(1).unwrap(), c.get(0).unwrap().end()))
            .collect();
        for (i, (mk, body_start)) in hits.iter().enumerate() {
            let body_end = hits.get(i + 1).map(|(next, _)| next.start()).unwrap_or(line.len());
            let payload = clean_payload(&line[*body_start..body_end.max(*body_start)]);
            if payload.is_empty() {
                continue;
            }
            out.push(MarkMention {
                mark_text: mk.as_str().to_string(),
                payload,
                span: base + mk.start()..base + mk.end(),
            });
        }
    }
    out
}

fn sentence_bounds(text: &str, at: usize) -> Range<usize> {
    let bytes = text.as_bytes();
    let is_end = |i: usize| {
        bytes[i] == b'\n'
            || (matches!(bytes[i], b'.' | b'!' | b'?') && bytes.get(i + 1).is_none_or(|c| c.is_ascii_whitespace()))
    };
    let mut start = at;
    while start > 0 && !is_end(start - 1) {
        start -= 1;
    }
    let mut end = at;
    while end < bytes.len() && !is_end(end) {
        end += 1;
    }
    start..end
}

fn lenient_payload(text: &str, mark: &Range<usize>) -> String {
    if let Some(c) = COPULA.captures(&text[mark.end..]) {
        return clean_payload(&c[1]);
    }
    let sentence = sentence_bounds(text, mark.start);
    // a quoted phrase before the mark, ignoring quotes around the mark itself
    let mut head_end = mark.start;
    while head_end > sentence.start && matches!(text.as_bytes()[head_end - 1], b'"' | b'\'') {
        head_end -= 1;
    }
    if let Some(c) = QUOTED.captures_iter(&text[sentence.start..head_end]).last() {
        return clean_payload(&c[1]);
    }
    clean_payload(&text[sentence])
}

fn lenient_pass(g: &Grammar, text: &str, known: &HashSet<String>) -> Vec<MarkMention> {
    let cue_ends: Vec<usize> = CUE.find_iter(text).map(|m| m.end()).collect();
    let mut out = Vec::new();
    let mut taken: HashSet<String> = known.clone();
    for mk in g.token.find_iter(text) {
        if taken.contains(mk.as_str()) {
            continue;
        }
        let cued = cue_ends
            .iter()
            .any(|&e| e <= mk.start() && mk.start() - e <= CUE_WINDOW);
        if !cued {
            continue;
        }
        taken.insert(mk.as_str().to_string());
        out.push(MarkMention {
            mark_text: mk.as_str().to_string(),
            payload: lenient_payload(text, &mk.range()),
            span: mk.range(),
        });
    }
    out
}

/// `"N. ... labeled with A ... labeled with B"`: object A of the first
/// frame is region B of the later frame.
fn tracking_pass(g: &Grammar, text: &str) -> Vec<MarkMention> {
    let mut out = Vec::new();
    for (base, line) in lines(text) {
        if let Some(c) = g.vos_pair.captures(line) {
            let b = c.get(2).unwrap();
            out.push(MarkMention {
                mark_text: b.as_str().to_string(),
                payload: c[1].to_string(),
                span: base + b.start()..base + b.end(),
            });
        }
    }
    out
}

fn add_new(acc: &mut Vec<MarkMention>, found: Vec<MarkMention>) {
    let known: HashSet<String> = acc.iter().map(|m| m.mark_text.clone()).collect();
    acc.extend(found.into_iter().filter(|m| !known.contains(&m.mark_text)));
}

/// Mark mentions in `text`, ordered by position.
pub fn parse_response(text: &str, manifest: &Manifest, task: TaskKind) -> Vec<MarkMention> {
    let Some(g) = Grammar::new(manifest) else {
        return Vec::new();
    };
    if task == TaskKind::VideoObjectSeg {
        let mut out = tracking_pass(&g, text);
        if !out.is_empty() {
            out.sort_by_key(|m| m.span.start);
            return out;
        }
    }
    let mut out = strict_pass(&g, text);
    add_new(&mut out, enumeration_pass(&g, text));
    let known = out.iter().map(|m| m.mark_text.clone()).collect();
    add_new(&mut out, lenient_pass(&g, text, &known));
    out.retain(|m| g.marks.contains(&m.mark_text));
    out.sort_by_key(|m| m.span.start);
    out
}

pub fn bind_triplets(
    raw: &str,
    mentions: Vec<MarkMention>,
    manifest: &Manifest,
    rs: &RegionSet,
) -> Result<GroundedAnswer, BindError> {
    manifest.check_against(rs).map_err(BindError::ManifestMismatch)?;
    let mut triplets = Vec::new();
    let mut dropped = 0;
    for m in &mentions {
        match manifest.region_for_mark(&m.mark_text) {
            Some(region_id) => triplets.push(Triplet {
                region_id,
                mark_text: m.mark_text.clone(),
                payload: m.payload.clone(),
            }),
            None => dropped += 1,
        }
    }
    Ok(GroundedAnswer {
        raw: raw.to_string(),
        mentions,
        triplets,
        dropped_unknown: dropped,
    })
}

/// Parse and bind in one step.
pub fn ground(raw: &str, manifest: &Manifest, rs: &RegionSet, task: TaskKind) -> Result<GroundedAnswer, BindError> {
    bind_triplets(raw, parse_response(raw, manifest, task), manifest, rs)
}

/// Lowercase, strip punctuation and quotes, drop leading articles.
pub fn normalize_phrase(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' })
        .collect();
    let mut words: Vec<&str> = cleaned.split_whitespace().collect();
    while words.len() > 1 && matches!(words[0], "a" | "an" | "the") {
        words.remove(0);
    }
    words.join(" ")
}

/// The region the answer assigns to `phrase`.
///
/// Tries an exact normalized payload match, then containment either way.
/// When the prompt carried a single expression, the first triplet is the
/// answer regardless of its payload.
pub fn select_region(triplets: &[Triplet], phrase: &str, single_expression: bool) -> Option<u32> {
    let want = normalize_phrase(phrase);
    let norm: Vec<String> = triplets.iter().map(|t| normalize_phrase(&t.payload)).collect();
    if let Some(i) = norm.iter().position(|p| *p == want) {
        return Some(triplets[i].region_id);
    }
    if !want.is_empty() {
        if let Some(i) = norm
            .iter()
            .position(|p| !p.is_empty() && (p.contains(&want) || want.contains(p.as_str())))
        {
            return Some(triplets[i].region_id);
        }
    }
    if single_expression {
        return triplets.first().map(|t| t.region_id);
    }
    None
}
