use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use main_annotate::agreement::{kappa_from_table, Contingency};
use main_annotate::chat::{self, Cohort, Overrides, ParticipantMeta, Story};
use main_annotate::prompting::{self, Issue, PromptLanguage};
use main_annotate::rubric::{story_structure_score, to_presence, AnnotationSet, Positions};
use main_annotate::sampling;

fn value_error(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_arg<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: ToString,
{
    s.parse().map_err(value_error)
}

fn story_arg(story: Option<&str>) -> PyResult<Option<Story>> {
    story.map(parse_arg).transpose()
}

fn snake(v: impl serde::Serialize) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn positions_dict<'py>(py: Python<'py>, p: &Positions) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (e, lines) in p.iter() {
        let v: Option<Vec<u32>> = (!lines.is_empty()).then(|| lines.iter().copied().collect());
        d.set_item(e.code(), v)?;
    }
    Ok(d)
}

fn issues_list<'py>(py: Python<'py>, issues: &[Issue]) -> PyResult<Bound<'py, PyList>> {
    let out = PyList::empty(py);
    for i in issues {
        out.append((snake(i.severity), snake(i.kind), i.detail.clone()))?;
    }
    Ok(out)
}

/// Parse CHAT text into a dict with the numbered utterances.
#[pyfunction]
#[pyo3(signature = (text, source_path = "input.cha", story = None))]
fn parse_transcript<'py>(
    py: Python<'py>,
    text: &str,
    source_path: &str,
    story: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let o = Overrides {
        story: story_arg(story)?,
        ..Default::default()
    };
    let t = chat::parse_transcript(text, source_path, &o).map_err(value_error)?;
    let d = PyDict::new(py);
    d.set_item("narrative_id", &t.narrative_id)?;
    d.set_item("story", t.story.to_string())?;
    d.set_item("participant_id", &t.participant.participant_id)?;
    d.set_item("cohort", t.cohort().map(|c| c.to_string()))?;
    let lines = PyList::empty(py);
    for u in &t.utterances {
        lines.append((
            u.index,
            u.speaker.clone(),
            u.raw_text.clone(),
            u.clean_text.clone(),
        ))?;
    }
    d.set_item("utterances", lines)?;
    d.set_item("warnings", t.warnings.clone())?;
    Ok(d)
}

/// Resolve CHAT markers in one utterance.
#[pyfunction]
fn clean_text(raw: &str) -> String {
    chat::clean_text(raw)
}

/// The user message the model receives for a transcript.
#[pyfunction]
#[pyo3(signature = (text, story = None, language = "zh"))]
fn build_prompt(text: &str, story: Option<&str>, language: &str) -> PyResult<String> {
    let o = Overrides {
        story: story_arg(story)?,
        ..Default::default()
    };
    let t = chat::parse_transcript(text, "input.cha", &o).map_err(value_error)?;
    let lang: PromptLanguage = parse_arg(language)?;
    Ok(prompting::build_prompt_with(&t, lang).user_message())
}

/// Extract the position dictionary from a model response. Returns the
/// positions (or None) and a list of (severity, kind, detail) issues.
#[pyfunction]
fn parse_position_dict<'py>(
    py: Python<'py>,
    text: &str,
    line_count: usize,
) -> PyResult<(Option<Bound<'py, PyDict>>, Bound<'py, PyList>)> {
    let r = prompting::parse_position_dict(text, line_count);
    let positions = r
        .positions
        .as_ref()
        .map(|p| positions_dict(py, p))
        .transpose()?;
    Ok((positions, issues_list(py, &r.issues)?))
}

/// Story structure score (0-17) of a model response's dictionary.
#[pyfunction]
fn score(text: &str, line_count: usize) -> PyResult<u32> {
    let r = prompting::parse_position_dict(text, line_count);
    let Some(positions) = r.positions else {
        return Err(value_error("no position dictionary found"));
    };
    let a = AnnotationSet {
        narrative_id: String::new(),
        rater_id: String::new(),
        story: Story::Dog,
        positions,
    };
    Ok(story_structure_score(&to_presence(&a)))
}

/// Cohen's kappa of a 2x2 table: a = both present, b = only the first
/// rater, c = only the second, d = both absent. None when undefined.
#[pyfunction]
fn kappa(a: u64, b: u64, c: u64, d: u64) -> PyResult<Option<f64>> {
    kappa_from_table(Contingency::new(a, b, c, d))
        .map(|k| k.kappa)
        .map_err(value_error)
}

/// Proportional stratified sample over (participant_id, cohort) pairs.
#[pyfunction]
#[pyo3(signature = (participants, rate = 0.15, seed = 0))]
fn stratified_sample(
    participants: Vec<(String, String)>,
    rate: f64,
    seed: u64,
) -> PyResult<Vec<String>> {
    let people = participants
        .into_iter()
        .map(|(id, cohort)| {
            Ok(ParticipantMeta {
                participant_id: id,
                cohort: Some(parse_arg::<Cohort>(&cohort)?),
                age: None,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let r = sampling::stratified_sample(&people, rate, seed).map_err(value_error)?;
    Ok(r.selected())
}

#[pymodule]
#[pyo3(name = "main_annotate")]
fn main_annotate_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(parse_transcript, m)?)?;
    m.add_function(wrap_pyfunction!(clean_text, m)?)?;
    m.add_function(wrap_pyfunction!(build_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(parse_position_dict, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(kappa, m)?)?;
    m.add_function(wrap_pyfunction!(stratified_sample, m)?)?;
    Ok(())
}
