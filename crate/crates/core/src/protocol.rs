//! Structured response format.
//!
//! Every model reply is a `<summary>` block followed by exactly one action
//! block, either `<frames>` (a request for more frames) or `<answer>` (the
//! final answer). The canonical form is
//!
//! ```text
//! <summary>
//! P: <previously seen>
//! O: <observations>
//! H: <hypotheses>
//! U: <uncertainties>
//! R: <reasons>
//! </summary>
//! <frames>3,7,12</frames>
//! ```
//!
//! [`parse_response`] is the strict referee used by the controller and the
//! reward. [`parse_lenient`] accepts the sloppier output of weaker backends.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Field labels in their fixed serialization order.
pub const FIELD_LABELS: [&str; 5] = ["P", "O", "H", "U", "R"];

/// The five-field state carried between rounds.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SummaryState {
    pub previously_seen: String,
    pub observations: String,
    pub hypotheses: String,
    pub uncertainties: String,
    pub reasons: String,
}

impl SummaryState {
    /// Builds a summary, sanitizing every field so it stays on one line.
    pub fn new(
        previously_seen: &str,
        observations: &str,
        hypotheses: &str,
        uncertainties: &str,
        reasons: &str,
    ) -> Self {
        Self {
            previously_seen: sanitize_field(previously_seen),
            observations: sanitize_field(observations),
            hypotheses: sanitize_field(hypotheses),
            uncertainties: sanitize_field(uncertainties),
            reasons: sanitize_field(reasons),
        }
    }

    /// A summary with structure switched off: the whole text lives in the
    /// observations slot and the other fields stay empty.
    pub fn free_text(text: &str) -> Self {
        Self {
            observations: sanitize_field(text),
            ..Self::default()
        }
    }

    pub fn fields(&self) -> [&str; 5] {
        [
            &self.previously_seen,
            &self.observations,
            &self.hypotheses,
            &self.uncertainties,
            &self.reasons,
        ]
    }

    fn field_mut(&mut self, i: usize) -> &mut String {
        match i {
            0 => &mut self.previously_seen,
            1 => &mut self.observations,
            2 => &mut self.hypotheses,
            3 => &mut self.uncertainties,
            _ => &mut self.reasons,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.fields().iter().all(|f| f.is_empty())
    }

    /// True when every field survives a serialize/parse round trip unchanged.
    pub fn is_well_formed(&self) -> bool {
        self.fields().iter().all(|f| is_well_formed_field(f))
    }

    /// Five `L: value` lines, each terminated by `\n`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (label, value) in FIELD_LABELS.iter().zip(self.fields()) {
            out.push_str(label);
            out.push_str(": ");
            out.push_str(value);
            out.push('\n');
        }
        out
    }

    /// Rendering for [`SummaryMode::FreeText`]: the observations slot alone.
    pub fn render_free_text(&self) -> String {
        let mut out = self.observations.clone();
        out.push('\n');
        out
    }

    pub fn render_in(&self, mode: SummaryMode) -> String {
        match mode {
            SummaryMode::Structured => self.render(),
            SummaryMode::FreeText => self.render_free_text(),
        }
    }
}

/// Collapses line breaks, replaces `<` so the value cannot open a tag, and
/// trims. Idempotent.
pub fn sanitize_field(value: &str) -> String {
    let mapped: String = value
        .chars()
        .map(|c| match c {
            '\n' | '\r' => ' ',
            '<' => '‹',
            c => c,
        })
        .collect();
    mapped.trim().to_string()
}

fn is_well_formed_field(value: &str) -> bool {
    !value.contains(['\n', '\r', '<']) && value.trim() == value
}

/// One multiple-choice option.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct AnswerOption {
    pub label: String,
    pub text: String,
}

/// The answer set `𝒴`, in presentation order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct AnswerSet {
    options: Vec<AnswerOption>,
}

/// Spreadsheet-style labels: A..Z, AA, AB, ...
pub fn option_label(index: usize) -> String {
    let mut n = index + 1;
    let mut out = Vec::new();
    while n > 0 {
        let rem = (n - 1) % 26;
        out.push(b'A' + rem as u8);
        n = (n - 1) / 26;
    }
    out.reverse();
    String::from_utf8(out).unwrap_or_default()
}

impl AnswerSet {
    pub fn new(options: Vec<AnswerOption>) -> Self {
        Self { options }
    }

    /// Labels options A, B, C, ... in order.
    pub fn from_texts<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let options = texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| AnswerOption {
                label: option_label(i),
                text: t.as_ref().trim().to_string(),
            })
            .collect();
        Self { options }
    }

    pub fn len(&self) -> usize {
        self.options.len()
    }

    pub fn is_empty(&self) -> bool {
        self.options.is_empty()
    }

    pub fn iter(&self) -> core::slice::Iter<'_, AnswerOption> {
        self.options.iter()
    }

    pub fn get(&self, index: usize) -> Option<&AnswerOption> {
        self.options.get(index)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.options.iter().map(|o| o.label.as_str())
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.options.iter().position(|o| o.label == label)
    }

    pub fn contains_label(&self, label: &str) -> bool {
        self.index_of(label).is_some()
    }

    /// Resolves free answer text to an option: the label (case-insensitive)
    /// or the exact option text (case-insensitive), both after trimming.
    pub fn resolve(&self, raw: &str) -> Option<&AnswerOption> {
        let needle = raw.trim();
        if needle.is_empty() {
            return None;
        }
        if let Some(o) = self
            .options
            .iter()
            .find(|o| o.label.eq_ignore_ascii_case(needle))
        {
            return Some(o);
        }
        let lowered = needle.to_lowercase();
        self.options
            .iter()
            .find(|o| !o.text.is_empty() && o.text.to_lowercase() == lowered)
    }
}

/// What the agent does this round.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum Action {
    /// 0-based frame indices in request order, distinct.
    FrameRequest(Vec<usize>),
    /// `label` is the resolved option; `free_text` is the raw tag content.
    FinalAnswer { label: String, free_text: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct AgentResponse {
    pub summary: SummaryState,
    pub action: Action,
}

impl AgentResponse {
    pub fn request(summary: SummaryState, indices: Vec<usize>) -> Self {
        Self {
            summary,
            action: Action::FrameRequest(indices),
        }
    }

    pub fn answer(summary: SummaryState, label: &str) -> Self {
        Self {
            summary,
            action: Action::FinalAnswer {
                label: label.to_string(),
                free_text: label.to_string(),
            },
        }
    }

    /// Checks the invariants [`serialize_response`] relies on.
    pub fn is_valid(&self, options: &AnswerSet) -> bool {
        if !self.summary.is_well_formed() {
            return false;
        }
        match &self.action {
            Action::FrameRequest(indices) => {
                if indices.is_empty() {
                    return false;
                }
                let mut sorted = indices.clone();
                sorted.sort_unstable();
                sorted.windows(2).all(|w| w[0] != w[1])
            }
            Action::FinalAnswer { label, free_text } => {
                is_well_formed_field(free_text)
                    && options.resolve(free_text).map(|o| o.label.as_str()) == Some(label.as_str())
            }
        }
    }

    pub fn is_answer(&self) -> bool {
        matches!(self.action, Action::FinalAnswer { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum ParseErrorKind {
    MissingSummary,
    MissingAction,
    BothActions,
    MalformedField,
    MalformedIndexList,
    TrailingContent,
}

/// The first grammar rule violated, in document order.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ParseError {
    pub kind: ParseErrorKind,
    /// Byte range of the offending region in the raw text.
    pub span: Range<usize>,
    pub message: String,
}

impl ParseError {
    fn new(kind: ParseErrorKind, span: Range<usize>, message: impl Into<String>) -> Self {
        Self {
            kind,
            span,
            message: message.into(),
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?} at bytes {}..{}: {}",
            self.kind, self.span.start, self.span.end, self.message
        )
    }
}

impl core::error::Error for ParseError {}

/// How the `<summary>` body is laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum SummaryMode {
    /// Five labeled lines P, O, H, U, R.
    #[default]
    Structured,
    /// A single free-text note.
    FreeText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParseOptions {
    pub mode: SummaryMode,
    pub lenient: bool,
}

impl ParseOptions {
    pub const STRICT: Self = Self {
        mode: SummaryMode::Structured,
        lenient: false,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TagKind {
    SummaryOpen,
    SummaryClose,
    FramesOpen,
    FramesClose,
    AnswerOpen,
    AnswerClose,
}

impl TagKind {
    fn text(self) -> &'static str {
        match self {
            TagKind::SummaryOpen => "<summary>",
            TagKind::SummaryClose => "</summary>",
            TagKind::FramesOpen => "<frames>",
            TagKind::FramesClose => "</frames>",
            TagKind::AnswerOpen => "<answer>",
            TagKind::AnswerClose => "</answer>",
        }
    }
}

const TAGS: [TagKind; 6] = [
    TagKind::SummaryOpen,
    TagKind::SummaryClose,
    TagKind::FramesOpen,
    TagKind::FramesClose,
    TagKind::AnswerOpen,
    TagKind::AnswerClose,
];

#[derive(Debug, Clone, Copy)]
struct TagHit {
    kind: TagKind,
    start: usize,
    end: usize,
}

/// Lazily yields protocol tags in document order.
struct TagScanner<'a> {
    bytes: &'a [u8],
    pos: usize,
    ignore_case: bool,
}

impl<'a> TagScanner<'a> {
    fn new(raw: &'a str, ignore_case: bool) -> Self {
        Self {
            bytes: raw.as_bytes(),
            pos: 0,
            ignore_case,
        }
    }
}

impl Iterator for TagScanner<'_> {
    type Item = TagHit;

    fn next(&mut self) -> Option<TagHit> {
        while self.pos < self.bytes.len() {
            let rel = self.bytes[self.pos..].iter().position(|&b| b == b'<')?;
            let at = self.pos + rel;
            let rest = &self.bytes[at..];
            for kind in TAGS {
                let tag = kind.text().as_bytes();
                if rest.len() >= tag.len() {
                    let candidate = &rest[..tag.len()];
                    let hit = if self.ignore_case {
                        candidate.eq_ignore_ascii_case(tag)
                    } else {
                        candidate == tag
                    };
                    if hit {
                        self.pos = at + tag.len();
                        return Some(TagHit {
                            kind,
                            start: at,
                            end: at + tag.len(),
                        });
                    }
                }
            }
            self.pos = at + 1;
        }
        None
    }
}

/// Text lying outside every tag pair.
struct Outside<'a> {
    before: &'a str,
    between: &'a str,
    after: &'a str,
}

impl Outside<'_> {
    fn is_blank(&self) -> bool {
        [self.before, self.between, self.after]
            .iter()
            .all(|s| s.trim().is_empty())
    }
}

/// Strict parse of a model reply.
pub fn parse_response(raw: &str, options: &AnswerSet) -> Result<AgentResponse, ParseError> {
    parse_with(raw, options, ParseOptions::STRICT)
}

/// Case-insensitive tags, positional field assignment, tolerant index lists
/// and answer spellings. Never used by the reward.
pub fn parse_lenient(raw: &str, options: &AnswerSet) -> Result<AgentResponse, ParseError> {
    parse_with(
        raw,
        options,
        ParseOptions {
            mode: SummaryMode::Structured,
            lenient: true,
        },
    )
}

pub fn parse_with(
    raw: &str,
    options: &AnswerSet,
    opts: ParseOptions,
) -> Result<AgentResponse, ParseError> {
    parse_document(raw, options, opts).map(|(r, _)| r)
}

/// Strict parse succeeds and nothing but whitespace sits outside the tags.
pub fn format_is_valid(raw: &str, options: &AnswerSet) -> bool {
    format_is_valid_in(raw, options, SummaryMode::Structured)
}

/// [`format_is_valid`] for a given summary layout.
pub fn format_is_valid_in(raw: &str, options: &AnswerSet, mode: SummaryMode) -> bool {
    let opts = ParseOptions {
        mode,
        lenient: false,
    };
    matches!(parse_document(raw, options, opts), Ok((_, outside)) if outside.is_blank())
}

fn describe(hit: &TagHit) -> &'static str {
    hit.kind.text()
}

fn parse_document<'a>(
    raw: &'a str,
    options: &AnswerSet,
    opts: ParseOptions,
) -> Result<(AgentResponse, Outside<'a>), ParseError> {
    use ParseErrorKind::*;

    let mut tags = TagScanner::new(raw, opts.lenient);

    let open = match tags.next() {
        Some(h) if h.kind == TagKind::SummaryOpen => h,
        Some(h) => {
            return Err(ParseError::new(
                MissingSummary,
                h.start..h.end,
                format!("expected <summary> before {}", describe(&h)),
            ))
        }
        None => {
            return Err(ParseError::new(
                MissingSummary,
                0..raw.len(),
                "no <summary> tag",
            ))
        }
    };
    let close = match tags.next() {
        Some(h) if h.kind == TagKind::SummaryClose => h,
        Some(h) => {
            return Err(ParseError::new(
                MissingSummary,
                open.start..h.end,
                format!("<summary> not closed before {}", describe(&h)),
            ))
        }
        None => {
            return Err(ParseError::new(
                MissingSummary,
                open.start..raw.len(),
                "unterminated <summary>",
            ))
        }
    };
    let summary = parse_summary_body(&raw[open.end..close.start], open.end, opts)?;

    let act_open = match tags.next() {
        Some(h) if matches!(h.kind, TagKind::FramesOpen | TagKind::AnswerOpen) => h,
        Some(h) if h.kind == TagKind::SummaryOpen => {
            return Err(ParseError::new(
                TrailingContent,
                h.start..raw.len(),
                "duplicate <summary> block",
            ))
        }
        Some(h) => {
            return Err(ParseError::new(
                MissingAction,
                h.start..h.end,
                format!("expected <frames> or <answer>, found {}", describe(&h)),
            ))
        }
        None => {
            return Err(ParseError::new(
                MissingAction,
                close.end..raw.len(),
                "no <frames> or <answer> after the summary",
            ))
        }
    };
    let want_close = match act_open.kind {
        TagKind::FramesOpen => TagKind::FramesClose,
        _ => TagKind::AnswerClose,
    };
    let act_close = match tags.next() {
        Some(h) if h.kind == want_close => h,
        Some(h) => {
            return Err(ParseError::new(
                MissingAction,
                act_open.start..h.end,
                format!("{} not closed before {}", describe(&act_open), describe(&h)),
            ))
        }
        None => {
            return Err(ParseError::new(
                MissingAction,
                act_open.start..raw.len(),
                format!("unterminated {}", describe(&act_open)),
            ))
        }
    };
    let body = &raw[act_open.end..act_close.start];
    let action = if act_open.kind == TagKind::FramesOpen {
        Action::FrameRequest(parse_index_list(body, act_open.end, opts.lenient)?)
    } else {
        parse_answer(body, act_open.end, options, opts.lenient)?
    };

    if let Some(extra) = tags.next() {
        let other_action = match act_open.kind {
            TagKind::FramesOpen => TagKind::AnswerOpen,
            _ => TagKind::FramesOpen,
        };
        return Err(if extra.kind == other_action {
            ParseError::new(
                BothActions,
                extra.start..extra.end,
                "both <frames> and <answer> present",
            )
        } else {
            ParseError::new(
                TrailingContent,
                extra.start..raw.len(),
                format!("unexpected {} after the action block", describe(&extra)),
            )
        });
    }

    let outside = Outside {
        before: &raw[..open.start],
        between: &raw[close.end..act_open.start],
        after: &raw[act_close.end..],
    };
    Ok((AgentResponse { summary, action }, outside))
}

/// Non-blank lines of `body` with their absolute byte offsets.
fn content_lines(body: &str, offset: usize) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut pos = 0;
    for line in body.split('\n') {
        if !line.trim().is_empty() {
            out.push((offset + pos, line));
        }
        pos += line.len() + 1;
    }
    out
}

fn parse_summary_body(
    body: &str,
    offset: usize,
    opts: ParseOptions,
) -> Result<SummaryState, ParseError> {
    if opts.mode == SummaryMode::FreeText {
        let joined: Vec<&str> = content_lines(body, offset)
            .into_iter()
            .map(|(_, l)| l.trim())
            .collect();
        return Ok(SummaryState::free_text(&joined.join(" ")));
    }
    if opts.lenient {
        return Ok(parse_summary_lenient(body, offset));
    }

    let lines = content_lines(body, offset);
    let mut summary = SummaryState::default();
    for (i, label) in FIELD_LABELS.iter().enumerate() {
        let Some(&(at, line)) = lines.get(i) else {
            return Err(ParseError::new(
                ParseErrorKind::MalformedField,
                offset..offset + body.len(),
                format!("missing field `{label}:`"),
            ));
        };
        let lead = line.len() - line.trim_start().len();
        let rest = &line[lead..];
        let value = rest
            .strip_prefix(label)
            .and_then(|r| r.strip_prefix(':'))
            .ok_or_else(|| {
                ParseError::new(
                    ParseErrorKind::MalformedField,
                    at..at + line.len(),
                    format!("expected field `{label}:`"),
                )
            })?;
        *summary.field_mut(i) = value.trim().to_string();
    }
    if let Some(&(at, line)) = lines.get(FIELD_LABELS.len()) {
        return Err(ParseError::new(
            ParseErrorKind::MalformedField,
            at..at + line.len(),
            "unexpected line after `R:`",
        ));
    }
    Ok(summary)
}

const LONG_LABELS: [&str; 5] = [
    "previously seen",
    "observations",
    "hypotheses",
    "uncertainties",
    "reasons",
];

/// Splits a leading field label off a line, if there is one.
fn split_label(line: &str) -> Option<(usize, &str)> {
    let trimmed = line.trim_start();
    let lower = trimmed.to_ascii_lowercase();
    for (i, long) in LONG_LABELS.iter().enumerate() {
        if lower.starts_with(long) {
            let rest = trimmed[long.len()..].trim_start();
            if let Some(v) = rest.strip_prefix([':', '-']) {
                return Some((i, v));
            }
        }
    }
    let mut chars = trimmed.chars();
    let first = chars.next()?.to_ascii_uppercase();
    let i = FIELD_LABELS.iter().position(|l| l.starts_with(first))?;
    let rest = chars.as_str().trim_start();
    rest.strip_prefix([':', '-', ')']).map(|v| (i, v))
}

fn parse_summary_lenient(body: &str, offset: usize) -> SummaryState {
    let mut summary = SummaryState::default();
    let mut next = 0usize;
    for (_, line) in content_lines(body, offset) {
        let (slot, value) = match split_label(line) {
            Some((i, v)) => (i, v),
            None => (next.min(FIELD_LABELS.len() - 1), line),
        };
        let value = sanitize_field(value);
        let field = summary.field_mut(slot);
        if !field.is_empty() && !value.is_empty() {
            field.push(' ');
        }
        field.push_str(&value);
        next = slot + 1;
    }
    summary
}

fn parse_index_list(body: &str, offset: usize, lenient: bool) -> Result<Vec<usize>, ParseError> {
    let malformed =
        |span: Range<usize>, msg: String| ParseError::new(ParseErrorKind::MalformedIndexList, span, msg);

    if lenient {
        let mut out: Vec<usize> = Vec::new();
        let bytes = body.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            if bytes[i].is_ascii_digit() {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if let Ok(v) = body[start..i].parse::<usize>() {
                    if !out.contains(&v) {
                        out.push(v);
                    }
                }
            } else {
                i += 1;
            }
        }
        if out.is_empty() {
            return Err(malformed(offset..offset + body.len(), "no frame indices".into()));
        }
        return Ok(out);
    }

    if body.trim().is_empty() {
        return Err(malformed(offset..offset + body.len(), "empty frame list".into()));
    }
    let mut out: Vec<usize> = Vec::new();
    let mut pos = 0;
    for part in body.split(',') {
        let span = offset + pos..offset + pos + part.len();
        pos += part.len() + 1;
        let token = part.trim();
        if token.is_empty() || !token.bytes().all(|b| b.is_ascii_digit()) {
            return Err(malformed(span, format!("`{token}` is not a frame index")));
        }
        let value = token
            .parse::<usize>()
            .map_err(|_| malformed(span.clone(), format!("`{token}` is out of range")))?;
        if out.contains(&value) {
            return Err(malformed(span, format!("duplicate frame index {value}")));
        }
        out.push(value);
    }
    Ok(out)
}

fn parse_answer(
    body: &str,
    offset: usize,
    options: &AnswerSet,
    lenient: bool,
) -> Result<Action, ParseError> {
    let text = body.trim();
    let resolved = options.resolve(text).or_else(|| {
        if lenient {
            resolve_loose(text, options)
        } else {
            None
        }
    });
    match resolved {
        Some(o) => Ok(Action::FinalAnswer {
            label: o.label.clone(),
            free_text: sanitize_field(text),
        }),
        None => Err(ParseError::new(
            ParseErrorKind::MalformedField,
            offset..offset + body.len(),
            format!("answer `{text}` does not match any option"),
        )),
    }
}

/// `(B)`, `B.`, `B) text`, `Option B`, or text containing exactly one option.
fn resolve_loose<'a>(text: &str, options: &'a AnswerSet) -> Option<&'a AnswerOption> {
    let stripped = text.trim_start_matches(|c: char| c == '(' || c == '[' || c.is_whitespace());
    let stripped = stripped
        .strip_prefix("Option ")
        .or_else(|| stripped.strip_prefix("option "))
        .unwrap_or(stripped);
    let head: &str = stripped
        .split(|c: char| c.is_whitespace() || matches!(c, '.' | ')' | ']' | ':' | ','))
        .next()
        .unwrap_or("");
    if let Some(o) = options.iter().find(|o| o.label.eq_ignore_ascii_case(head)) {
        return Some(o);
    }
    let lowered = text.to_lowercase();
    let mut hits = options
        .iter()
        .filter(|o| !o.text.is_empty() && lowered.contains(&o.text.to_lowercase()));
    match (hits.next(), hits.next()) {
        (Some(o), None) => Some(o),
        _ => None,
    }
}

/// Canonical serialization. `r` must satisfy [`AgentResponse::is_valid`].
pub fn serialize_response(r: &AgentResponse) -> String {
    serialize_in(r, SummaryMode::Structured)
}

pub fn serialize_in(r: &AgentResponse, mode: SummaryMode) -> String {
    let mut out = String::from("<summary>\n");
    out.push_str(&r.summary.render_in(mode));
    out.push_str("</summary>\n");
    match &r.action {
        Action::FrameRequest(indices) => {
            out.push_str("<frames>");
            for (i, idx) in indices.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&idx.to_string());
            }
            out.push_str("</frames>");
        }
        Action::FinalAnswer { free_text, .. } => {
            out.push_str("<answer>");
            out.push_str(free_text);
            out.push_str("</answer>");
        }
    }
    out
}
