//! Annotation prompts and position-dictionary parsing.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chat::{render_numbered_block, Story, TextMode, Transcript};
use crate::rubric::{AnnotationSet, ElementId, Positions, ELEMENT_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptLanguage {
    #[default]
    Zh,
    En,
}

impl std::str::FromStr for PromptLanguage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "zh" | "chinese" => Ok(PromptLanguage::Zh),
            "en" | "english" => Ok(PromptLanguage::En),
            other => Err(format!("unknown prompt language {other:?}")),
        }
    }
}

/// A versioned instruction template shipped with the crate.
#[derive(Debug, Clone, Copy)]
pub struct Template {
    pub story: Story,
    pub language: PromptLanguage,
    pub text: &'static str,
}

const TEMPLATES: [Template; 4] = [
    Template {
        story: Story::Dog,
        language: PromptLanguage::Zh,
        text: include_str!("../assets/prompts/dog.zh.txt"),
    },
    Template {
        story: Story::Dog,
        language: PromptLanguage::En,
        text: include_str!("../assets/prompts/dog.en.txt"),
    },
    Template {
        story: Story::Cat,
        language: PromptLanguage::Zh,
        text: include_str!("../assets/prompts/cat.zh.txt"),
    },
    Template {
        story: Story::Cat,
        language: PromptLanguage::En,
        text: include_str!("../assets/prompts/cat.en.txt"),
    },
];

impl Template {
    pub fn get(story: Story, language: PromptLanguage) -> &'static Template {
        TEMPLATES
            .iter()
            .find(|t| t.story == story && t.language == language)
            .expect("a template exists for every story and language")
    }

    pub fn all() -> &'static [Template] {
        &TEMPLATES
    }

    /// Asset name, e.g. `dog.zh`.
    pub fn id(&self) -> String {
        let lang = match self.language {
            PromptLanguage::Zh => "zh",
            PromptLanguage::En => "en",
        };
        format!("{}.{lang}", self.story)
    }

    /// Hex SHA-256 of the template bytes.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.text.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub narrative_id: String,
    pub story: Story,
    pub language: PromptLanguage,
    pub template_id: String,
    pub template_checksum: String,
    pub instruction_text: String,
    pub numbered_block: String,
    pub line_count: usize,
}

impl PromptBundle {
    /// The single user message sent to the model.
    pub fn user_message(&self) -> String {
        let label = match self.language {
            PromptLanguage::Zh => "叙事文本=",
            PromptLanguage::En => "Narrative text:",
        };
        format!(
            "{}\n\n{label}\n\n““““\n{}\n””””\n",
            self.instruction_text.trim_end(),
            self.numbered_block
        )
    }
}

pub fn build_prompt(t: &Transcript) -> PromptBundle {
    build_prompt_with(t, PromptLanguage::default())
}

pub fn build_prompt_with(t: &Transcript, language: PromptLanguage) -> PromptBundle {
    let template = Template::get(t.story, language);
    PromptBundle {
        narrative_id: t.narrative_id.clone(),
        story: t.story,
        language,
        template_id: template.id(),
        template_checksum: template.checksum(),
        instruction_text: template.text.to_string(),
        // markers are kept: the model sees the transcript as transcribed
        numbered_block: render_numbered_block(t, TextMode::Raw),
        line_count: t.line_count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warning,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    NoDictionaryFound,
    MissingKeys,
    OutOfRangeIndex,
    DuplicateKey,
    TrailingComma,
    ScalarValue,
    UnknownKey,
    UnparseableValue,
    EarlierDrafts,
    NarrativeMismatch,
    StoryMismatch,
    ElementsPresent,
    MultiElementLine,
    /// Presence changed on an element the human raters agree on.
    LockedElement,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    pub kind: IssueKind,
    pub detail: String,
}

impl Issue {
    pub fn new(severity: Severity, kind: IssueKind, detail: impl Into<String>) -> Self {
        Self {
            severity,
            kind,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Info => "info",
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{sev}: {:?}: {}", self.kind, self.detail)
    }
}

pub fn has_errors(issues: &[Issue]) -> bool {
    issues.iter().any(|i| i.severity == Severity::Error)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub positions: Option<Positions>,
    pub issues: Vec<Issue>,
    pub repaired: bool,
}

impl ParseReport {
    pub fn into_annotation(
        self,
        narrative_id: impl Into<String>,
        rater_id: impl Into<String>,
        story: Story,
    ) -> Option<AnnotationSet> {
        self.positions.map(|positions| AnnotationSet {
            narrative_id: narrative_id.into(),
            rater_id: rater_id.into(),
            story,
            positions,
        })
    }

    fn failed(issue: Issue) -> Self {
        Self {
            positions: None,
            issues: vec![issue],
            repaired: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Str(String),
    Word(String),
    Int(i64),
    Colon,
    Comma,
    Open,
    Close,
    Other(char),
}

fn is_quote(c: char) -> bool {
    matches!(c, '\'' | '"' | '‘' | '’' | '“' | '”' | '`')
}

fn tokenize(body: &str) -> Vec<Token> {
    let chars: Vec<char> = body.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if is_quote(c) {
            let end = chars[i + 1..]
                .iter()
                .position(|&x| is_quote(x))
                .map(|p| i + 1 + p)
                .unwrap_or(chars.len());
            out.push(Token::Str(chars[i + 1..end].iter().collect()));
            i = end + 1;
        } else if c.is_ascii_digit()
            || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
        {
            let start = i;
            i += 1;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let digits: String = chars[start..i].iter().collect();
            // absurdly long numbers saturate; they are out of range anyway
            out.push(Token::Int(digits.parse().unwrap_or(i64::MAX)));
        } else if c.is_alphanumeric() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Word(chars[start..i].iter().collect()));
        } else {
            out.push(match c {
                ':' | '：' => Token::Colon,
                ',' | '，' | '、' => Token::Comma,
                '[' | '(' | '【' | '（' => Token::Open,
                ']' | ')' | '】' | '）' => Token::Close,
                other => Token::Other(other),
            });
            i += 1;
        }
    }
    out
}

fn is_null_word(w: &str) -> bool {
    matches!(w.to_ascii_lowercase().as_str(), "null" | "none" | "nil")
}

/// Non-nested `{...}` spans, as byte ranges of their interiors.
fn brace_blocks(text: &str) -> Vec<(usize, usize)> {
    let mut blocks = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    for (i, c) in text.char_indices() {
        match c {
            '{' | '｛' => {
                if depth == 0 {
                    start = i + c.len_utf8();
                }
                depth += 1;
            }
            '}' | '｝' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    blocks.push((start, i));
                }
            }
            _ => {}
        }
    }
    blocks
}

fn looks_like_dict(body: &str) -> bool {
    tokenize(body).iter().any(|t| match t {
        Token::Str(s) | Token::Word(s) => s.trim().parse::<ElementId>().is_ok(),
        _ => false,
    })
}

enum Value {
    Absent,
    Lines(Vec<i64>),
}

/// Parse one `key: value` value starting at `pos`; returns the value and the
/// position after it, or `None` when the value is unparseable.
fn parse_value(
    tokens: &[Token],
    mut pos: usize,
    key: &str,
    issues: &mut Vec<Issue>,
) -> Option<(Value, usize)> {
    match tokens.get(pos)? {
        Token::Word(w) if is_null_word(w) => Some((Value::Absent, pos + 1)),
        Token::Str(s) if is_null_word(s.trim()) => Some((Value::Absent, pos + 1)),
        Token::Int(n) => {
            issues.push(Issue::new(
                Severity::Warning,
                IssueKind::ScalarValue,
                format!("{key}: bare number {n} read as [{n}]"),
            ));
            Some((Value::Lines(vec![*n]), pos + 1))
        }
        Token::Open => {
            pos += 1;
            let mut lines = Vec::new();
            let mut expect_item = true;
            loop {
                match tokens.get(pos)? {
                    Token::Close => {
                        if !expect_item || lines.is_empty() {
                            return Some((Value::Lines(lines), pos + 1));
                        }
                        issues.push(Issue::new(
                            Severity::Warning,
                            IssueKind::TrailingComma,
                            format!("{key}: trailing comma in list"),
                        ));
                        return Some((Value::Lines(lines), pos + 1));
                    }
                    Token::Int(n) if expect_item => {
                        lines.push(*n);
                        expect_item = false;
                    }
                    Token::Str(s) if expect_item && s.trim().parse::<i64>().is_ok() => {
                        lines.push(s.trim().parse().unwrap());
                        expect_item = false;
                    }
                    Token::Comma if !expect_item => expect_item = true,
                    _ => return None,
                }
                pos += 1;
            }
        }
        _ => None,
    }
}

/// Locate the last dictionary-shaped block in a model response and read it
/// into positions for all 17 elements.
pub fn parse_position_dict(response: &str, line_count: usize) -> ParseReport {
    let candidates: Vec<(usize, usize)> = brace_blocks(response)
        .into_iter()
        .filter(|&(s, e)| looks_like_dict(&response[s..e]))
        .collect();
    let Some(&(start, end)) = candidates.last() else {
        return ParseReport::failed(Issue::new(
            Severity::Error,
            IssueKind::NoDictionaryFound,
            "no dictionary with element keys found in the response",
        ));
    };

    let mut issues = Vec::new();
    if candidates.len() > 1 {
        issues.push(Issue::new(
            Severity::Info,
            IssueKind::EarlierDrafts,
            format!(
                "{} earlier dictionary blocks ignored; the last one is used",
                candidates.len() - 1
            ),
        ));
    }

    let tokens = tokenize(&response[start..end]);
    let mut slots: [Option<Vec<u32>>; ELEMENT_COUNT] = Default::default();
    let mut pos = 0;
    while pos < tokens.len() {
        let key = match &tokens[pos] {
            Token::Str(s) | Token::Word(s) => s.trim().to_string(),
            Token::Comma => {
                pos += 1;
                if pos >= tokens.len() {
                    issues.push(Issue::new(
                        Severity::Warning,
                        IssueKind::TrailingComma,
                        "trailing comma after the last entry",
                    ));
                }
                continue;
            }
            other => {
                issues.push(Issue::new(
                    Severity::Error,
                    IssueKind::UnparseableValue,
                    format!("unexpected {other:?} where a key was expected"),
                ));
                pos = skip_entry(&tokens, pos);
                continue;
            }
        };
        if tokens.get(pos + 1) != Some(&Token::Colon) {
            issues.push(Issue::new(
                Severity::Error,
                IssueKind::UnparseableValue,
                format!("{key}: missing ':'"),
            ));
            pos = skip_entry(&tokens, pos + 1);
            continue;
        }
        let element = key.parse::<ElementId>().ok();
        let parsed = parse_value(&tokens, pos + 2, &key, &mut issues);
        let Some((value, next)) = parsed else {
            let severity = if element.is_some() {
                Severity::Error
            } else {
                Severity::Warning
            };
            issues.push(Issue::new(
                severity,
                IssueKind::UnparseableValue,
                format!("{key}: value could not be read"),
            ));
            pos = skip_entry(&tokens, pos + 2);
            continue;
        };
        pos = next;
        let Some(element) = element else {
            issues.push(Issue::new(
                Severity::Warning,
                IssueKind::UnknownKey,
                format!("unknown key {key:?} ignored"),
            ));
            continue;
        };
        let mut lines = Vec::new();
        if let Value::Lines(raw) = value {
            for n in raw {
                if n >= 1 && (n as u64) <= line_count as u64 {
                    lines.push(n as u32);
                } else {
                    issues.push(Issue::new(
                        Severity::Warning,
                        IssueKind::OutOfRangeIndex,
                        format!("{element}: line {n} outside 1..={line_count}, dropped"),
                    ));
                }
            }
        }
        if slots[element.index()].is_some() {
            issues.push(Issue::new(
                Severity::Warning,
                IssueKind::DuplicateKey,
                format!("{element} appears more than once; the last value is used"),
            ));
        }
        slots[element.index()] = Some(lines);
    }

    let missing: Vec<String> = ElementId::all()
        .filter(|e| slots[e.index()].is_none())
        .map(|e| e.code())
        .collect();
    if !missing.is_empty() {
        issues.push(Issue::new(
            Severity::Error,
            IssueKind::MissingKeys,
            format!("missing element keys: {}", missing.join(", ")),
        ));
    }

    let repaired = issues.iter().any(|i| i.severity == Severity::Warning);
    let positions = if has_errors(&issues) {
        None
    } else {
        let mut p = Positions::empty();
        for e in ElementId::all() {
            p.set(e, slots[e.index()].take().unwrap_or_default());
        }
        Some(p)
    };
    ParseReport {
        positions,
        issues,
        repaired,
    }
}

fn skip_entry(tokens: &[Token], mut pos: usize) -> usize {
    let mut depth = 0i32;
    while pos < tokens.len() {
        match tokens[pos] {
            Token::Open => depth += 1,
            Token::Close => depth -= 1,
            Token::Comma if depth <= 0 => return pos + 1,
            _ => {}
        }
        pos += 1;
    }
    pos
}

/// Check an annotation against the transcript it refers to. Errors make the
/// annotation unusable; info entries carry summary statistics.
pub fn validate_annotation(a: &AnnotationSet, t: &Transcript) -> Vec<Issue> {
    let mut issues = Vec::new();
    if a.narrative_id != t.narrative_id {
        issues.push(Issue::new(
            Severity::Error,
            IssueKind::NarrativeMismatch,
            format!(
                "annotation is for {:?}, transcript is {:?}",
                a.narrative_id, t.narrative_id
            ),
        ));
    }
    if a.story != t.story {
        issues.push(Issue::new(
            Severity::Error,
            IssueKind::StoryMismatch,
            format!(
                "annotation story {} differs from transcript story {}",
                a.story, t.story
            ),
        ));
    }
    issues.extend(validate_positions(&a.positions, t.line_count()));
    issues
}

/// Range checks and statistics for positions against a transcript of
/// `line_count` lines.
pub fn validate_positions(positions: &Positions, line_count: usize) -> Vec<Issue> {
    let mut issues = Vec::new();
    for (e, lines) in positions.iter() {
        for &l in lines {
            if l < 1 || l as usize > line_count {
                issues.push(Issue::new(
                    Severity::Error,
                    IssueKind::OutOfRangeIndex,
                    format!("{e}: line {l} outside 1..={line_count}"),
                ));
            }
        }
    }
    issues.push(Issue::new(
        Severity::Info,
        IssueKind::ElementsPresent,
        format!("{} of 17 elements present", positions.present_count()),
    ));
    for (line, elements) in positions.by_line() {
        if elements.len() > 1 {
            let list = elements
                .iter()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join(", ");
            issues.push(Issue::new(
                Severity::Info,
                IssueKind::MultiElementLine,
                format!("line {line} carries {list}"),
            ));
        }
    }
    issues
}
