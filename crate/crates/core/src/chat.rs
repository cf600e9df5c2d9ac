//! CHAT transcript parsing.
//!
//! Only the subset of CHAT used by MAIN narrative transcripts is understood:
//! `@` header tiers, `*` speaker tiers, `%` dependent tiers, tab-indented
//! continuation lines, the retrace codes `[/]`, `[//]`, `[///]` with optional
//! `<...>` scoping, pauses such as `(.)`, and `&-` fillers. Anything else is
//! carried through untouched.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChatError {
    #[error("transcript has no speaker tiers")]
    EmptyTranscript,
    #[error("line {line}: tier without tab separator: {text:?}")]
    MalformedTier { line: usize, text: String },
    #[error("story is not declared in the header and no override was given")]
    UnknownStory,
    #[error("unrecognised story {0:?} (expected dog or cat)")]
    InvalidStory(String),
    #[error("unrecognised cohort {0:?}")]
    InvalidCohort(String),
    #[error("unrecognised age {0:?} (expected years;months)")]
    InvalidAge(String),
    #[error("io error reading {path}: {message}")]
    Io { path: String, message: String },
}

/// MAIN story variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Story {
    Dog,
    Cat,
}

impl Story {
    pub fn as_str(self) -> &'static str {
        match self {
            Story::Dog => "dog",
            Story::Cat => "cat",
        }
    }
}

impl fmt::Display for Story {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Story {
    type Err = ChatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dog" | "story1" => Ok(Story::Dog),
            "cat" | "story2" => Ok(Story::Cat),
            _ => Err(ChatError::InvalidStory(s.to_string())),
        }
    }
}

/// Speaker age group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cohort {
    Children,
    Young,
    Elderly,
}

impl Cohort {
    pub const ALL: [Cohort; 3] = [Cohort::Children, Cohort::Young, Cohort::Elderly];

    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::Children => "children",
            Cohort::Young => "young",
            Cohort::Elderly => "elderly",
        }
    }

    /// Three-letter code used in participant ids (`chi-56`, `you-5`, `eld-3`).
    pub fn short_code(self) -> &'static str {
        match self {
            Cohort::Children => "chi",
            Cohort::Young => "you",
            Cohort::Elderly => "eld",
        }
    }

    /// Age bounds in whole years, inclusive.
    pub fn age_bounds(self) -> (u32, u32) {
        match self {
            Cohort::Children => (3, 7),
            Cohort::Young => (20, 39),
            Cohort::Elderly => (60, 90),
        }
    }

    pub fn from_age(age: Age) -> Option<Cohort> {
        Cohort::ALL.into_iter().find(|c| {
            let (lo, hi) = c.age_bounds();
            (lo..=hi).contains(&age.years)
        })
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Cohort {
    type Err = ChatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "children" | "child" | "chi" => Ok(Cohort::Children),
            "young" | "you" | "young adults" | "young_adults" => Ok(Cohort::Young),
            "elderly" | "eld" | "older adults" | "older_adults" | "old" => Ok(Cohort::Elderly),
            _ => Err(ChatError::InvalidCohort(s.to_string())),
        }
    }
}

/// Age as CHAT writes it, `years;months`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Age {
    pub years: u32,
    pub months: u32,
}

impl fmt::Display for Age {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{};{}", self.years, self.months)
    }
}

impl FromStr for Age {
    type Err = ChatError;

    /// Accepts `3;6`, `3;06`, `3;06.` and `3;06.15` (days ignored).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ChatError::InvalidAge(s.to_string());
        let trimmed = s.trim();
        let (y, rest) = trimmed.split_once(';').unwrap_or((trimmed, ""));
        let years: u32 = y.parse().map_err(|_| bad())?;
        let month_part = rest.split('.').next().unwrap_or("");
        let months = if month_part.is_empty() {
            0
        } else {
            month_part.parse().map_err(|_| bad())?
        };
        if months > 11 {
            return Err(bad());
        }
        Ok(Age { years, months })
    }
}

impl Serialize for Age {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Age {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantMeta {
    pub participant_id: String,
    pub cohort: Option<Cohort>,
    pub age: Option<Age>,
}

/// Dependent tier attached to an utterance. Never numbered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependentTier {
    pub code: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub index: u32,
    pub speaker: String,
    /// Tier content with continuation lines folded into single spaces.
    pub raw_text: String,
    pub clean_text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dependents: Vec<DependentTier>,
    /// The physical source lines of the tier, exactly as read.
    #[serde(skip)]
    source: String,
}

impl Utterance {
    pub fn source_lines(&self) -> &str {
        &self.source
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub narrative_id: String,
    pub participant: ParticipantMeta,
    pub story: Story,
    pub utterances: Vec<Utterance>,
    pub source_path: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Transcript {
    pub fn line_count(&self) -> usize {
        self.utterances.len()
    }

    pub fn cohort(&self) -> Option<Cohort> {
        self.participant.cohort
    }

    /// Speaker tiers reassembled from their source lines, in file order.
    pub fn speaker_tier_lines(&self) -> String {
        let mut out = String::new();
        for u in &self.utterances {
            out.push_str(&u.source);
            out.push('\n');
        }
        out
    }
}

/// Metadata that can be supplied from outside the file (CLI flags or a
/// corpus manifest). Set values take precedence over header values.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overrides {
    #[serde(default)]
    pub narrative_id: Option<String>,
    #[serde(default)]
    pub story: Option<Story>,
    #[serde(default)]
    pub cohort: Option<Cohort>,
    #[serde(default)]
    pub participant_id: Option<String>,
    #[serde(default)]
    pub age: Option<Age>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextMode {
    Raw,
    Clean,
}

#[derive(Default)]
struct HeaderInfo {
    story: Option<Story>,
    participant_id: Option<String>,
    cohort: Option<Cohort>,
    age: Option<Age>,
}

enum Tier {
    Speaker { code: String, lines: Vec<String> },
    Dependent { code: String, lines: Vec<String> },
    Header { key: String, lines: Vec<String> },
}

fn tier_content(lines: &[String]) -> String {
    // first line is "<code>:\t<content>", continuation lines start with a tab
    let first = lines[0].split_once('\t').map(|(_, c)| c).unwrap_or("");
    let mut content = first.to_string();
    for cont in &lines[1..] {
        content.push(' ');
        content.push_str(cont.trim_start_matches('\t'));
    }
    content.trim_end_matches('\r').trim().to_string()
}

/// Parse a CHAT transcript from text. `source_path` is recorded verbatim and
/// its file stem is the default narrative id.
pub fn parse_transcript(
    input: &str,
    source_path: &str,
    overrides: &Overrides,
) -> Result<Transcript, ChatError> {
    let input = input.strip_prefix('\u{feff}').unwrap_or(input);
    let mut tiers: Vec<Tier> = Vec::new();

    for (lineno, line) in input.split('\n').enumerate() {
        let lineno = lineno + 1;
        let bare = line.trim_end_matches('\r');
        if bare.trim().is_empty() {
            continue;
        }
        if line.starts_with('\t') {
            match tiers.last_mut() {
                Some(Tier::Speaker { lines, .. })
                | Some(Tier::Dependent { lines, .. })
                | Some(Tier::Header { lines, .. }) => lines.push(line.to_string()),
                None => {
                    return Err(ChatError::MalformedTier {
                        line: lineno,
                        text: bare.to_string(),
                    })
                }
            }
            continue;
        }
        let malformed = || ChatError::MalformedTier {
            line: lineno,
            text: bare.to_string(),
        };
        match line.as_bytes()[0] {
            b'*' | b'%' => {
                let (head, _) = line.split_once('\t').ok_or_else(malformed)?;
                let code = head[1..].trim_end_matches(':').to_string();
                if code.is_empty() {
                    return Err(malformed());
                }
                let lines = vec![line.to_string()];
                tiers.push(if line.starts_with('*') {
                    Tier::Speaker { code, lines }
                } else {
                    Tier::Dependent { code, lines }
                });
            }
            b'@' => {
                let key = match line.split_once('\t') {
                    Some((head, _)) => head[1..].trim_end_matches(':').to_string(),
                    // flag headers such as @Begin carry no content
                    None if !bare.contains(':') => bare[1..].to_string(),
                    None => return Err(malformed()),
                };
                tiers.push(Tier::Header {
                    key,
                    lines: vec![line.to_string()],
                });
            }
            _ => return Err(malformed()),
        }
    }

    let mut header = HeaderInfo::default();
    let mut warnings = Vec::new();
    let mut utterances: Vec<Utterance> = Vec::new();

    for tier in tiers {
        match tier {
            Tier::Header { key, lines } => {
                let content = if lines[0].contains('\t') {
                    tier_content(&lines)
                } else {
                    String::new()
                };
                read_header(&key, &content, &mut header, &mut warnings);
            }
            Tier::Speaker { code, lines } => {
                let raw_text = tier_content(&lines);
                let cleaned = clean_text_checked(&raw_text);
                for w in &cleaned.warnings {
                    warnings.push(format!("line {}: {}", utterances.len() + 1, w));
                }
                let source = lines
                    .iter()
                    .map(|l| l.as_str())
                    .collect::<Vec<_>>()
                    .join("\n");
                utterances.push(Utterance {
                    index: utterances.len() as u32 + 1,
                    speaker: code,
                    raw_text,
                    clean_text: cleaned.text,
                    dependents: Vec::new(),
                    source,
                });
            }
            Tier::Dependent { code, lines } => {
                let content = tier_content(&lines);
                match utterances.last_mut() {
                    Some(u) => u.dependents.push(DependentTier { code, content }),
                    None => {
                        warnings.push(format!("dependent tier %{code} before any speaker tier"))
                    }
                }
            }
        }
    }

    if utterances.is_empty() {
        return Err(ChatError::EmptyTranscript);
    }

    let story = overrides
        .story
        .or(header.story)
        .ok_or(ChatError::UnknownStory)?;
    let narrative_id = overrides.narrative_id.clone().unwrap_or_else(|| {
        Path::new(source_path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| source_path.to_string())
    });
    let age = overrides.age.or(header.age);
    let mut cohort = overrides.cohort.or(header.cohort);
    if cohort.is_none() {
        cohort = age.and_then(Cohort::from_age);
    }
    match (cohort, age) {
        (Some(c), Some(a)) => {
            let (lo, hi) = c.age_bounds();
            if !(lo..=hi).contains(&a.years) {
                warnings.push(format!(
                    "age {a} lies outside the {c} range {lo}-{hi} years"
                ));
            }
        }
        (None, _) => warnings.push("cohort unknown".to_string()),
        _ => {}
    }
    let participant_id = overrides
        .participant_id
        .clone()
        .or(header.participant_id)
        .unwrap_or_else(|| narrative_id.clone());

    Ok(Transcript {
        narrative_id,
        participant: ParticipantMeta {
            participant_id,
            cohort,
            age,
        },
        story,
        utterances,
        source_path: source_path.to_string(),
        warnings,
    })
}

fn read_header(key: &str, content: &str, header: &mut HeaderInfo, warnings: &mut Vec<String>) {
    match key.to_ascii_lowercase().as_str() {
        "story" => match content.parse::<Story>() {
            Ok(s) => header.story = Some(s),
            Err(e) => warnings.push(e.to_string()),
        },
        "cohort" => match content.parse::<Cohort>() {
            Ok(c) => header.cohort = Some(c),
            Err(e) => warnings.push(e.to_string()),
        },
        "participant" | "participant_id" => header.participant_id = Some(content.to_string()),
        "id" => {
            // language|corpus|code|age|sex|group|SES|role|education|custom|
            let fields: Vec<&str> = content.split('|').map(str::trim).collect();
            let role = fields.get(7).copied().unwrap_or("");
            if role.eq_ignore_ascii_case("investigator") || role.eq_ignore_ascii_case("examiner") {
                return;
            }
            if let Some(age) = fields.get(3).filter(|s| !s.is_empty()) {
                match age.parse::<Age>() {
                    Ok(a) => header.age = Some(a),
                    Err(e) => warnings.push(e.to_string()),
                }
            }
            if let Some(group) = fields.get(5).filter(|s| !s.is_empty()) {
                if let Ok(c) = group.parse::<Cohort>() {
                    header.cohort = Some(c);
                }
            }
            if let Some(custom) = fields.get(9).filter(|s| !s.is_empty()) {
                header.participant_id = Some(custom.to_string());
            }
        }
        _ => {}
    }
}

/// Read and parse a `.cha` file.
pub fn parse_file(path: &Path, overrides: &Overrides) -> Result<Transcript, ChatError> {
    let text = std::fs::read_to_string(path).map_err(|e| ChatError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_transcript(&text, &path.display().to_string(), overrides)
}

/// One line per utterance, `<index> <text>`.
pub fn render_numbered_block(t: &Transcript, mode: TextMode) -> String {
    t.utterances
        .iter()
        .map(|u| {
            let text = match mode {
                TextMode::Raw => &u.raw_text,
                TextMode::Clean => &u.clean_text,
            };
            format!("{} {}", u.index, text)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CleanWarning {
    UnbalancedBrackets,
    UnknownCode(String),
}

impl fmt::Display for CleanWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CleanWarning::UnbalancedBrackets => {
                f.write_str("unbalanced '<' / '>' brackets; text left as is")
            }
            CleanWarning::UnknownCode(c) => write!(f, "unknown code {c} passed through"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cleaned {
    pub text: String,
    pub warnings: Vec<CleanWarning>,
}

/// Resolve transcription markers. See [`clean_text_checked`].
pub fn clean_text(raw: &str) -> String {
    clean_text_checked(raw).text
}

#[derive(Debug)]
enum Piece {
    Text(String),
    /// `<...>` scope
    Scope(String),
    Code(String),
}

fn is_retrace(code: &str) -> bool {
    matches!(code, "[/]" | "[//]" | "[///]")
}

fn is_pause(inner: &str) -> bool {
    !inner.is_empty()
        && (inner.chars().all(|c| c == '.')
            || (inner
                .chars()
                .all(|c| c.is_ascii_digit() || c == '.' || c == ':')
                && inner.chars().any(|c| c.is_ascii_digit())))
}

fn ends_filler(c: char) -> bool {
    c.is_whitespace() || "<>[]()，。？！,.;?!".contains(c)
}

/// Resolve retraces, drop pauses and `&-` fillers, and normalize whitespace.
///
/// Unbalanced angle brackets leave the input unchanged and report
/// [`CleanWarning::UnbalancedBrackets`]. The rules are applied until the text
/// stops changing, so the result is a fixed point.
pub fn clean_text_checked(raw: &str) -> Cleaned {
    let first = clean_pass(raw);
    let mut text = first.text;
    loop {
        let next = clean_pass(&text).text;
        if next == text {
            break;
        }
        text = next;
    }
    Cleaned {
        text,
        warnings: first.warnings,
    }
}

fn clean_pass(raw: &str) -> Cleaned {
    let mut warnings = Vec::new();
    let mut pieces: Vec<Piece> = Vec::new();
    let mut text = String::new();
    let chars: Vec<char> = raw.chars().collect();
    let mut i = 0;
    let flush = |text: &mut String, pieces: &mut Vec<Piece>| {
        if !text.is_empty() {
            pieces.push(Piece::Text(std::mem::take(text)));
        }
    };

    while i < chars.len() {
        let c = chars[i];
        match c {
            '<' => {
                let Some(len) = chars[i + 1..].iter().position(|&x| x == '>') else {
                    return unbalanced(raw);
                };
                let inner: String = chars[i + 1..i + 1 + len].iter().collect();
                if inner.contains('<') {
                    return unbalanced(raw);
                }
                flush(&mut text, &mut pieces);
                pieces.push(Piece::Scope(inner));
                i += len + 2;
            }
            '>' => return unbalanced(raw),
            '[' => match chars[i + 1..].iter().position(|&x| x == ']') {
                Some(len) => {
                    flush(&mut text, &mut pieces);
                    let code: String = chars[i..i + len + 2].iter().collect();
                    pieces.push(Piece::Code(code));
                    i += len + 2;
                }
                None => {
                    text.push(c);
                    i += 1;
                }
            },
            '(' => {
                let close = chars[i + 1..].iter().position(|&x| x == ')');
                match close {
                    Some(len)
                        if is_pause(&chars[i + 1..i + 1 + len].iter().collect::<String>()) =>
                    {
                        i += len + 2;
                    }
                    _ => {
                        text.push(c);
                        i += 1;
                    }
                }
            }
            '&' if chars.get(i + 1) == Some(&'-') => {
                i += 2;
                while i < chars.len() && !ends_filler(chars[i]) {
                    i += 1;
                }
            }
            _ => {
                text.push(c);
                i += 1;
            }
        }
    }
    flush(&mut text, &mut pieces);

    // Resolve retrace codes against the material immediately before them.
    let mut out: Vec<Piece> = Vec::new();
    for piece in pieces {
        match piece {
            Piece::Code(code) if is_retrace(&code) => {
                while matches!(out.last(), Some(Piece::Text(t)) if t.trim().is_empty()) {
                    out.pop();
                }
                match out.last_mut() {
                    Some(Piece::Scope(_)) => {
                        out.pop();
                    }
                    Some(Piece::Text(prev)) => {
                        // without a scope the retrace covers the preceding word
                        let trimmed = prev.trim_end();
                        let cut = trimmed
                            .rfind(char::is_whitespace)
                            .map(|p| p + trimmed[p..].chars().next().unwrap().len_utf8())
                            .unwrap_or(0);
                        prev.truncate(cut);
                        if prev.trim().is_empty() {
                            out.pop();
                        }
                    }
                    _ => {}
                }
            }
            Piece::Code(code) => {
                warnings.push(CleanWarning::UnknownCode(code.clone()));
                out.push(Piece::Code(code));
            }
            other => out.push(other),
        }
    }

    let mut joined = String::new();
    for piece in &out {
        match piece {
            Piece::Text(t) => joined.push_str(t),
            Piece::Scope(s) => {
                joined.push('<');
                joined.push_str(s);
                joined.push('>');
            }
            Piece::Code(c) => joined.push_str(c),
        }
    }
    Cleaned {
        text: normalize_whitespace(&joined),
        warnings,
    }
}

fn unbalanced(raw: &str) -> Cleaned {
    Cleaned {
        text: raw.to_string(),
        warnings: vec![CleanWarning::UnbalancedBrackets],
    }
}

fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dog() -> Overrides {
        Overrides {
            story: Some(Story::Dog),
            ..Default::default()
        }
    }

    #[test]
    fn single_speaker_line() {
        let t = parse_transcript("*CHI:\t有一天小狗出来玩。\n", "x.cha", &dog()).unwrap();
        assert_eq!(t.utterances.len(), 1);
        assert_eq!(t.utterances[0].index, 1);
        assert_eq!(t.utterances[0].raw_text, "有一天小狗出来玩。");
        assert_eq!(t.narrative_id, "x");
    }

    #[test]
    fn no_speaker_tiers_is_empty() {
        let err = parse_transcript("@Begin\n@Story:\tdog\n@End\n", "x.cha", &dog()).unwrap_err();
        assert_eq!(err, ChatError::EmptyTranscript);
    }

    #[test]
    fn tier_without_tab_is_malformed() {
        let err = parse_transcript("*CHI: 有一天\n", "x.cha", &dog()).unwrap_err();
        assert!(matches!(err, ChatError::MalformedTier { line: 1, .. }));
    }

    #[test]
    fn story_from_header_or_override() {
        let t = parse_transcript(
            "@Story:\tcat\n*CHI:\t小猫\n",
            "x.cha",
            &Overrides::default(),
        )
        .unwrap();
        assert_eq!(t.story, Story::Cat);
        let t = parse_transcript("@Story:\tcat\n*CHI:\t小猫\n", "x.cha", &dog()).unwrap();
        assert_eq!(t.story, Story::Dog);
        let err = parse_transcript("*CHI:\t小猫\n", "x.cha", &Overrides::default()).unwrap_err();
        assert_eq!(err, ChatError::UnknownStory);
    }

    #[test]
    fn id_header_fills_participant() {
        let src = "@ID:\tzho|main|CHI|5;04.|female|chi||Target_Child||chi-56|\n@Story:\tdog\n*CHI:\t小狗\n";
        let t = parse_transcript(src, "chi-56_dog.cha", &Overrides::default()).unwrap();
        assert_eq!(t.participant.participant_id, "chi-56");
        assert_eq!(t.participant.cohort, Some(Cohort::Children));
        assert_eq!(
            t.participant.age,
            Some(Age {
                years: 5,
                months: 4
            })
        );
        assert!(t.warnings.is_empty(), "{:?}", t.warnings);
    }

    #[test]
    fn cohort_inferred_from_age_and_inconsistency_warns() {
        let src = "@ID:\tzho|main|CHI|72;01.|male|||Target_Child|||\n*CHI:\t小狗\n";
        let t = parse_transcript(src, "a.cha", &dog()).unwrap();
        assert_eq!(t.participant.cohort, Some(Cohort::Elderly));

        let o = Overrides {
            cohort: Some(Cohort::Young),
            ..dog()
        };
        let t = parse_transcript(src, "a.cha", &o).unwrap();
        assert_eq!(t.participant.cohort, Some(Cohort::Young));
        assert!(t.warnings.iter().any(|w| w.contains("outside")));
    }

    #[test]
    fn dependent_tiers_attach_without_numbering() {
        let src = "*CHI:\t小狗\n%com:\tpoints\n*CHI:\t跑了\n";
        let t = parse_transcript(src, "a.cha", &dog()).unwrap();
        assert_eq!(t.utterances.len(), 2);
        assert_eq!(t.utterances[0].dependents[0].code, "com");
        assert_eq!(t.utterances[1].index, 2);
    }

    #[test]
    fn continuation_lines_fold_and_round_trip() {
        let src = "*CHI:\t有一天\n\t小狗出来玩。\n*CHI:\t完了\n";
        let t = parse_transcript(src, "a.cha", &dog()).unwrap();
        assert_eq!(t.utterances[0].raw_text, "有一天 小狗出来玩。");
        assert_eq!(t.speaker_tier_lines(), src);
    }

    #[test]
    fn table7_clean_examples() {
        assert_eq!(
            clean_text("<后> [//] 后来小朋友够到气球了。"),
            "后来小朋友够到气球了。"
        );
        assert_eq!(
            clean_text("最后 &-uh 小朋友 &-uh 很开心。"),
            "最后 小朋友 很开心。"
        );
        assert_eq!(clean_text("只好用头伸进(.) 去看。"), "只好用头伸进 去看。");
    }

    #[test]
    fn repetition_keeps_one_copy() {
        assert_eq!(
            clean_text("可是我们小狗<在> [/] 在开心地吃着肉肠。"),
            "可是我们小狗 在开心地吃着肉肠。"
        );
        assert_eq!(clean_text("他 [/] 他就去"), "他就去");
        assert_eq!(clean_text("<他 说> [///] 她说"), "她说");
    }

    #[test]
    fn unbalanced_brackets_pass_through() {
        let c = clean_text_checked("小狗<在 跑");
        assert_eq!(c.text, "小狗<在 跑");
        assert_eq!(c.warnings, vec![CleanWarning::UnbalancedBrackets]);
        let c = clean_text_checked("小狗> 跑");
        assert_eq!(c.warnings, vec![CleanWarning::UnbalancedBrackets]);
    }

    #[test]
    fn unknown_codes_pass_through() {
        let c = clean_text_checked("小狗 [?] 跑了");
        assert_eq!(c.text, "小狗 [?] 跑了");
        assert_eq!(c.warnings, vec![CleanWarning::UnknownCode("[?]".into())]);
        assert_eq!(clean_text(&c.text), c.text);
    }

    #[test]
    fn parenthesised_words_are_not_pauses() {
        assert_eq!(clean_text("去找气(球)"), "去找气(球)");
        assert_eq!(clean_text("然后 (..) 它 (1.5) 跑"), "然后 它 跑");
    }

    #[test]
    fn numbered_block_lines() {
        let t = parse_transcript("*CHI:\t甲\n*CHI:\t<乙> [//] 丙\n", "a.cha", &dog()).unwrap();
        assert_eq!(
            render_numbered_block(&t, TextMode::Raw),
            "1 甲\n2 <乙> [//] 丙"
        );
        assert_eq!(render_numbered_block(&t, TextMode::Clean), "1 甲\n2 丙");
    }

    #[test]
    fn age_parsing() {
        assert_eq!(
            "3;06.".parse::<Age>().unwrap(),
            Age {
                years: 3,
                months: 6
            }
        );
        assert_eq!(
            "25;1".parse::<Age>().unwrap(),
            Age {
                years: 25,
                months: 1
            }
        );
        assert_eq!(
            "60".parse::<Age>().unwrap(),
            Age {
                years: 60,
                months: 0
            }
        );
        assert!("3;12".parse::<Age>().is_err());
    }
}
