//! Prompt construction from a plain-text template with named placeholders,
//! and a reader for the default layout used by scripted backends.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::protocol::{AnswerSet, SummaryMode, SummaryState};

pub const FORCED_MARKER: &str = "You must now answer; frame requests are not permitted.";
pub const REPROMPT_MARKER: &str = "Format reminder:";
pub const SUMMARY_ONLY_MARKER: &str = "Answer from the summary alone; no frames are shown.";

const STRUCTURED_GRAMMAR: &str = "\
Response format (required):
<summary>
P: what you have already inspected
O: what the frames you just saw show
H: how this changes your hypothesis (do not state the answer label)
U: what is still uncertain
R: which frames to inspect next and why, or that the question is answered
</summary>
followed by exactly one of
<frames>comma-separated 0-based frame indices</frames>
<answer>option label</answer>
Write nothing outside these tags.
";

const FREE_TEXT_GRAMMAR: &str = "\
Response format (required):
<summary>
free-text notes on what you have seen and what remains unknown
</summary>
followed by exactly one of
<frames>comma-separated 0-based frame indices</frames>
<answer>option label</answer>
Write nothing outside these tags.
";

pub fn grammar_block(mode: SummaryMode) -> &'static str {
    match mode {
        SummaryMode::Structured => STRUCTURED_GRAMMAR,
        SummaryMode::FreeText => FREE_TEXT_GRAMMAR,
    }
}

pub const DEFAULT_TEMPLATE: &str = "\
You are answering a question about a video by inspecting a few frames at a time.
Video: {video_id}
Total frames: {total_frames} (fps {fps})
Question: {question}
Options:
{options}Summary format: {summary_format}
Current summary:
{summary}Round {round} of {max_rounds}; {remaining} round(s) remain after this one. Request at most {cap} new frames per round.
Frames shown this round:
{frames}{notice}{instructions}";

const PLACEHOLDERS: [&str; 14] = [
    "video_id",
    "total_frames",
    "fps",
    "question",
    "options",
    "summary_format",
    "summary",
    "round",
    "max_rounds",
    "remaining",
    "cap",
    "frames",
    "notice",
    "instructions",
];

const REQUIRED: [&str; 5] = ["question", "options", "summary", "frames", "instructions"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template is missing required placeholder {{{0}}}")]
    MissingPlaceholder(&'static str),
    #[error("template uses unknown placeholder {{{0}}}")]
    UnknownPlaceholder(String),
}

/// A prompt template. Placeholders are `{name}`; unknown names are rejected
/// when the template is loaded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            text: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        for name in placeholder_names(text) {
            if !PLACEHOLDERS.contains(&name) {
                return Err(TemplateError::UnknownPlaceholder(name.to_string()));
            }
        }
        for req in REQUIRED {
            if !text.contains(&format!("{{{req}}}")) {
                return Err(TemplateError::MissingPlaceholder(req));
            }
        }
        Ok(Self {
            text: text.to_string(),
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    fn render(&self, lookup: impl Fn(&str) -> Option<String>) -> String {
        let mut out = String::with_capacity(self.text.len() + 256);
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) if is_ident(&after[..close]) => {
                    let name = &after[..close];
                    match lookup(name) {
                        Some(v) => out.push_str(&v),
                        None => {
                            out.push('{');
                            out.push_str(name);
                            out.push('}');
                        }
                    }
                    rest = &after[close + 1..];
                }
                _ => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

fn placeholder_names(text: &str) -> Vec<&str> {
    let mut names = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_ident(&after[..close]) => {
                names.push(&after[..close]);
                rest = &after[close + 1..];
            }
            _ => rest = after,
        }
    }
    names
}

/// A frame as presented to the model.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ShownFrame {
    pub index: usize,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    /// A normal decision round; the grammar block is included when `first`.
    Round { first: bool },
    /// Answer-only round after the budget or round limit is hit.
    Forced,
    /// Frames-free re-ask used for summary sufficiency.
    SummaryOnly,
}

/// Everything a prompt is built from. Only the latest summary is read.
#[derive(Debug, Clone, Copy)]
pub struct PromptInputs<'a> {
    pub video_id: &'a str,
    pub total_frames: usize,
    pub fps: f64,
    pub question: &'a str,
    pub options: &'a AnswerSet,
    pub summary: Option<&'a SummaryState>,
    pub summary_mode: SummaryMode,
    pub shown: &'a [ShownFrame],
    pub round: usize,
    pub max_rounds: usize,
    pub cap: usize,
    pub notice: Option<&'a str>,
    pub kind: PromptKind,
}

/// The summary a prompt conditions on, derived from the committed history.
///
/// Summaries are cumulative, so folding the history keeps only its last
/// element; conditioning on `{z_0..z_{t-1}}` and on `z_{t-1}` coincide.
pub fn summary_from_history(history: &[SummaryState]) -> Option<&SummaryState> {
    history.iter().fold(None, |_, z| Some(z))
}

pub fn build_prompt(template: &PromptTemplate, inputs: &PromptInputs<'_>) -> String {
    let empty = SummaryState::default();
    let summary = inputs.summary.unwrap_or(&empty).render_in(inputs.summary_mode);

    let mut options = String::new();
    for o in inputs.options.iter() {
        let _ = writeln!(options, "{}. {}", o.label, o.text);
    }

    let mut frames = String::new();
    if inputs.shown.is_empty() {
        frames.push_str("(none)\n");
    }
    for f in inputs.shown {
        let _ = writeln!(frames, "Frame {} @ {:.2}s", f.index, f.timestamp);
    }

    let mut notice = String::new();
    if let Some(n) = inputs.notice {
        let _ = writeln!(notice, "Notice: {n}");
    }
    let instructions: String = match inputs.kind {
        PromptKind::Round { first: true } => grammar_block(inputs.summary_mode).to_string(),
        PromptKind::Round { first: false } => String::new(),
        PromptKind::Forced => format!(
            "{FORCED_MARKER} Reply with <summary> followed by <answer> only.\n"
        ),
        PromptKind::SummaryOnly => format!("{SUMMARY_ONLY_MARKER}\n"),
    };
    let remaining = inputs.max_rounds.saturating_sub(inputs.round);
    let format_name = match inputs.summary_mode {
        SummaryMode::Structured => "structured (P/O/H/U/R)",
        SummaryMode::FreeText => "free text",
    };

    template.render(|name| {
        Some(match name {
            "video_id" => inputs.video_id.to_string(),
            "total_frames" => inputs.total_frames.to_string(),
            "fps" => format!("{:.2}", inputs.fps),
            "question" => inputs.question.to_string(),
            "options" => options.clone(),
            "summary_format" => format_name.to_string(),
            "summary" => summary.clone(),
            "round" => inputs.round.to_string(),
            "max_rounds" => inputs.max_rounds.to_string(),
            "remaining" => remaining.to_string(),
            "cap" => inputs.cap.to_string(),
            "frames" => frames.clone(),
            "notice" => notice.clone(),
            "instructions" => instructions.clone(),
            _ => return None,
        })
    })
}

/// Appends a format reminder after an unusable reply.
pub fn reprompt(base: &str, reason: &str, mode: SummaryMode) -> String {
    format!(
        "{base}{REPROMPT_MARKER} your previous reply could not be used ({reason}). Reply again using exactly the required format.\n{}",
        grammar_block(mode)
    )
}

/// Fields recovered from a prompt in the default layout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PromptView {
    pub video_id: Option<String>,
    pub total_frames: Option<usize>,
    pub round: Option<usize>,
    pub max_rounds: Option<usize>,
    pub cap: Option<usize>,
    pub structured: bool,
    pub summary_lines: Vec<String>,
    pub shown: Vec<usize>,
    pub forced: bool,
    pub reprompt: bool,
    pub summary_only: bool,
}

impl PromptView {
    pub fn parse(prompt: &str) -> Self {
        let mut view = PromptView {
            structured: true,
            forced: prompt.contains(FORCED_MARKER),
            reprompt: prompt.contains(REPROMPT_MARKER),
            summary_only: prompt.contains(SUMMARY_ONLY_MARKER),
            ..Self::default()
        };
        #[derive(PartialEq)]
        enum Section {
            Head,
            Summary,
            Frames,
        }
        let mut section = Section::Head;
        for line in prompt.lines() {
            if let Some(rest) = line.strip_prefix("Round ") {
                section = Section::Head;
                let mut words = rest.split(|c: char| c == ' ' || c == ';');
                view.round = words.next().and_then(|w| w.parse().ok());
                if words.next() == Some("of") {
                    view.max_rounds = words.next().and_then(|w| w.parse().ok());
                }
                if let Some(at) = rest.find("at most ") {
                    view.cap = rest[at + 8..]
                        .split(' ')
                        .next()
                        .and_then(|w| w.parse().ok());
                }
                continue;
            }
            match section {
                Section::Summary => {
                    view.summary_lines.push(line.to_string());
                    continue;
                }
                Section::Frames => {
                    if let Some(rest) = line.strip_prefix("Frame ") {
                        if let Some(i) = rest.split(' ').next().and_then(|w| w.parse().ok()) {
                            view.shown.push(i);
                        }
                        continue;
                    }
                    if line != "(none)" {
                        section = Section::Head;
                    }
                }
                Section::Head => {}
            }
            if let Some(v) = line.strip_prefix("Video: ") {
                view.video_id = Some(v.trim().to_string());
            } else if let Some(v) = line.strip_prefix("Total frames: ") {
                view.total_frames = v.split(' ').next().and_then(|w| w.parse().ok());
            } else if let Some(v) = line.strip_prefix("Summary format: ") {
                view.structured = !v.starts_with("free text");
            } else if line == "Current summary:" {
                section = Section::Summary;
            } else if line == "Frames shown this round:" {
                section = Section::Frames;
            }
        }
        view
    }

    /// Value of a structured summary field (`"P"`, `"O"`, ...).
    pub fn summary_field(&self, label: &str) -> Option<&str> {
        self.summary_lines.iter().find_map(|l| {
            l.strip_prefix(label)
                .and_then(|r| r.strip_prefix(':'))
                .map(str::trim)
        })
    }

    /// The whole summary block joined into one line.
    pub fn summary_text(&self) -> String {
        let parts: Vec<&str> = self
            .summary_lines
            .iter()
            .map(|l| l.trim())
            .filter(|l| !l.is_empty())
            .collect();
        parts.join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn inputs<'a>(
        options: &'a AnswerSet,
        summary: Option<&'a SummaryState>,
        shown: &'a [ShownFrame],
        kind: PromptKind,
    ) -> PromptInputs<'a> {
        PromptInputs {
            video_id: "vid-1",
            total_frames: 40,
            fps: 2.0,
            question: "What colour is the car?",
            options,
            summary,
            summary_mode: SummaryMode::Structured,
            shown,
            round: 2,
            max_rounds: 4,
            cap: 3,
            notice: None,
            kind,
        }
    }

    #[test]
    fn grammar_only_in_first_round() {
        let opts = AnswerSet::from_texts(["red", "blue"]);
        let t = PromptTemplate::default();
        let first = build_prompt(&t, &inputs(&opts, None, &[], PromptKind::Round { first: true }));
        let later = build_prompt(&t, &inputs(&opts, None, &[], PromptKind::Round { first: false }));
        assert!(first.contains("Response format (required):"));
        assert!(!later.contains("Response format (required):"));
    }

    #[test]
    fn deterministic_and_summary_once() {
        let opts = AnswerSet::from_texts(["red", "blue"]);
        let z = SummaryState::new("frames 0,7", "a red car", "red likely", "lighting", "none");
        let shown = [
            ShownFrame { index: 7, timestamp: 3.5 },
            ShownFrame { index: 0, timestamp: 0.0 },
        ];
        let t = PromptTemplate::default();
        let a = build_prompt(&t, &inputs(&opts, Some(&z), &shown, PromptKind::Round { first: true }));
        let b = build_prompt(&t, &inputs(&opts, Some(&z), &shown, PromptKind::Round { first: true }));
        assert_eq!(a, b);
        assert_eq!(a.matches(z.render().as_str()).count(), 1);
        assert!(a.contains("Frame 7 @ 3.50s\n"));
        assert!(a.contains("Total frames: 40"));
        assert!(a.contains("2 round(s) remain"));
    }

    #[test]
    fn history_fold_is_latest() {
        let zs = vec![
            SummaryState::new("a", "", "", "", ""),
            SummaryState::new("b", "", "", "", ""),
        ];
        assert_eq!(summary_from_history(&zs), zs.last());
        assert_eq!(summary_from_history(&[]), None);
    }

    #[test]
    fn view_round_trips_default_layout() {
        let opts = AnswerSet::from_texts(["red", "blue"]);
        let z = SummaryState::new("seen 1", "evidence none", "", "", "");
        let shown = [ShownFrame { index: 12, timestamp: 6.0 }];
        let p = build_prompt(
            &PromptTemplate::default(),
            &PromptInputs {
                notice: Some("frames 3 (already seen) were not admitted"),
                ..inputs(&opts, Some(&z), &shown, PromptKind::Forced)
            },
        );
        let v = PromptView::parse(&p);
        assert_eq!(v.video_id.as_deref(), Some("vid-1"));
        assert_eq!(v.total_frames, Some(40));
        assert_eq!(v.round, Some(2));
        assert_eq!(v.max_rounds, Some(4));
        assert_eq!(v.cap, Some(3));
        assert_eq!(v.shown, vec![12]);
        assert!(v.forced && !v.reprompt && !v.summary_only && v.structured);
        assert_eq!(v.summary_field("P"), Some("seen 1"));
        assert_eq!(v.summary_field("O"), Some("evidence none"));
    }

    #[test]
    fn templates_validate_placeholders() {
        assert!(PromptTemplate::parse(DEFAULT_TEMPLATE).is_ok());
        assert_eq!(
            PromptTemplate::parse("{question}{options}{summary}{frames}"),
            Err(TemplateError::MissingPlaceholder("instructions"))
        );
        assert!(matches!(
            PromptTemplate::parse("{question}{options}{summary}{frames}{instructions}{bogus}"),
            Err(TemplateError::UnknownPlaceholder(_))
        ));
        let t = PromptTemplate::parse("Q={question} {options}{summary}{frames}{instructions} {not closed").unwrap();
        let opts = AnswerSet::from_texts(["x"]);
        let p = build_prompt(&t, &inputs(&opts, None, &[], PromptKind::Round { first: false }));
        assert!(p.starts_with("Q=What colour"));
        assert!(p.ends_with("{not closed"));
    }
}
