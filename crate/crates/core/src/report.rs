//! Agreement, score, cost and workflow reports in markdown or long-format
//! CSV. Rendering is deterministic: identical inputs give identical bytes.
//!
//! Unit of analysis: one item per (narrative, element) presence judgment,
//! pooled over both stories.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::{
    interpretation, kappa_by_category, kappa_by_cohort, mean_of_two, round_half_up, AgreementError,
    AnnotationStore, Band, KappaResult, Scope,
};
use crate::annotate::{NarrativeStatus, RunManifest};
use crate::chat::{Cohort, Story};
use crate::rubric::{story_structure_score, to_presence, Category, ELEMENT_COUNT};

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("a report needs at least two raters with annotations, found {0}")]
    InsufficientRaters(usize),
    #[error(transparent)]
    Agreement(#[from] AgreementError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

/// Value as printed with three decimals, in thousandths.
fn printed_milli(k: f64) -> i64 {
    (round_half_up(k, 3) * 1000.0).round() as i64
}

/// Mean of the defined values as they are printed (three decimals), rounded
/// half-up to three decimals. This is how a table's mean column relates to
/// the columns beside it.
pub fn printed_mean(values: &[Option<f64>]) -> Option<f64> {
    let milli: Vec<i64> = values.iter().flatten().map(|&k| printed_milli(k)).collect();
    if milli.is_empty() {
        return None;
    }
    let (sum, n) = (milli.iter().sum::<i64>(), milli.len() as i64);
    let mean = (2 * sum + n).div_euclid(2 * n);
    Some(mean as f64 / 1000.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverallRow {
    pub pair: String,
    pub kappa: Option<f64>,
    pub interpretation: String,
    /// Items in the pooled table (first comparison for human-model rows).
    pub items: u64,
    /// For human-model rows, the kappa against each human.
    pub components: Vec<(String, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupRow {
    pub label: String,
    pub human_human: Option<f64>,
    pub models: Vec<Option<f64>>,
    pub model_mean: Option<f64>,
    pub interpretation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupTable {
    pub title: String,
    pub group_heading: String,
    pub model_columns: Vec<String>,
    pub rows: Vec<GroupRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreSummary {
    pub rater: String,
    pub narratives: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: u32,
    pub median: f64,
    pub max: u32,
    /// Count of narratives per score 0..=17.
    pub histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostRow {
    pub profile: String,
    pub model: String,
    pub narratives_ok: usize,
    pub narratives_failed: usize,
    pub tokens: u64,
    pub cost: f64,
    pub currency: String,
    pub minutes: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkflowInputs {
    pub stories: usize,
    pub baseline_minutes_per_story: f64,
    pub llm_minutes: f64,
    pub review_minutes: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkflowSavings {
    pub inputs: WorkflowInputs,
    pub manual_minutes: f64,
    pub assisted_minutes: f64,
    /// Fraction of manual time saved, 0..1 (negative if slower).
    pub reduction: f64,
}

/// Manual effort `stories * baseline` against LLM time plus review time.
pub fn workflow_savings(inputs: WorkflowInputs) -> WorkflowSavings {
    let manual = inputs.stories as f64 * inputs.baseline_minutes_per_story;
    let assisted = inputs.llm_minutes + inputs.review_minutes;
    let reduction = if manual > 0.0 {
        1.0 - assisted / manual
    } else {
        0.0
    };
    WorkflowSavings {
        inputs,
        manual_minutes: manual,
        assisted_minutes: assisted,
        reduction,
    }
}

/// Which raters play which role. `humans` holds one or two ids; with two,
/// human-model kappas are the mean over both.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportSpec {
    pub humans: Vec<String>,
    pub models: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub overall: Vec<OverallRow>,
    pub categories: GroupTable,
    pub cohorts: GroupTable,
    pub scores: Vec<ScoreSummary>,
    pub costs: Vec<CostRow>,
    pub workflow: Option<WorkflowSavings>,
    pub notes: Vec<String>,
}

/// Kappa of a model against the humans: the single kappa with one human,
/// the mean of the two unrounded kappas with two.
fn human_model<F>(humans: &[String], model: &str, mut k: F) -> Result<Option<f64>, AgreementError>
where
    F: FnMut(&str, &str) -> Result<Option<f64>, AgreementError>,
{
    match humans {
        [h] => k(model, h),
        [h1, h2, ..] => Ok(mean_of_two(k(model, h1)?, k(model, h2)?)),
        [] => Ok(None),
    }
}

fn group_row(label: String, human_human: Option<f64>, models: Vec<Option<f64>>) -> GroupRow {
    let model_mean = printed_mean(&models);
    let basis = if models.is_empty() {
        human_human
    } else {
        model_mean
    };
    GroupRow {
        label,
        human_human,
        models,
        model_mean,
        interpretation: interpretation(basis).to_string(),
    }
}

fn model_column(model: &str) -> String {
    format!("Human-{model}")
}

pub fn build_report(
    store: &AnnotationStore,
    spec: &ReportSpec,
    manifests: &[RunManifest],
    workflow: Option<WorkflowInputs>,
) -> Result<Report, ReportError> {
    let raters: Vec<&String> = spec.humans.iter().chain(&spec.models).collect();
    let known = raters
        .iter()
        .filter(|r| store.annotations(r).is_some())
        .count();
    if raters.len() < 2 || known < raters.len() {
        if let Some(r) = raters.iter().find(|r| store.annotations(r).is_none()) {
            return Err(AgreementError::UnknownRater(r.to_string()).into());
        }
        return Err(ReportError::InsufficientRaters(known));
    }
    let humans = &spec.humans;
    let mut notes = Vec::new();

    // overall
    let mut overall = Vec::new();
    if let [h1, h2, ..] = humans.as_slice() {
        let k = store.kappa(h1, h2, Scope::Overall)?;
        let j = store.judgments(h1, h2)?;
        if j.excluded_narratives > 0 {
            notes.push(format!(
                "{h1} vs {h2}: {} narratives without both annotations excluded",
                j.excluded_narratives
            ));
        }
        overall.push(OverallRow {
            pair: "inter-human-annotator".to_string(),
            kappa: k.kappa,
            interpretation: interpretation(k.kappa).to_string(),
            items: k.n,
            components: Vec::new(),
        });
    }
    for m in &spec.models {
        let mut components = Vec::new();
        let mut items = 0;
        for h in humans {
            let k = store.kappa(m, h, Scope::Overall)?;
            if items == 0 {
                items = k.n;
            }
            components.push((h.clone(), k.kappa));
        }
        let kappa = human_model(humans, m, |a, b| {
            Ok(store.kappa(a, b, Scope::Overall)?.kappa)
        })?;
        if kappa.is_none() {
            notes.push(format!(
                "human vs. {m}: kappa undefined (single-category ratings)"
            ));
        }
        overall.push(OverallRow {
            pair: format!("human vs. {m}"),
            kappa,
            interpretation: interpretation(kappa).to_string(),
            items,
            components,
        });
    }

    // by category
    let cat_of = |a: &str, b: &str| kappa_by_category(store, a, b);
    let hh_cat: Option<BTreeMap<Category, KappaResult>> = match humans.as_slice() {
        [h1, h2, ..] => Some(cat_of(h1, h2)?),
        _ => None,
    };
    let mut per_model_cat: Vec<BTreeMap<Category, Option<f64>>> = Vec::new();
    for m in &spec.models {
        let tables: Vec<BTreeMap<Category, KappaResult>> = humans
            .iter()
            .map(|h| cat_of(m, h))
            .collect::<Result<_, _>>()?;
        let mut out = BTreeMap::new();
        for c in Category::ALL {
            let ks: Vec<Option<f64>> = tables.iter().map(|t| t[&c].kappa).collect();
            let v = match ks.as_slice() {
                [k] => *k,
                [k1, k2, ..] => mean_of_two(*k1, *k2),
                [] => None,
            };
            out.insert(c, v);
        }
        per_model_cat.push(out);
    }
    let mut cat_rows: Vec<(usize, GroupRow)> = Category::ALL
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let hh = hh_cat.as_ref().and_then(|t| t[&c].kappa);
            let models = per_model_cat.iter().map(|m| m[&c]).collect();
            (i, group_row(c.display_name().to_string(), hh, models))
        })
        .collect();
    if !spec.models.is_empty() {
        // descending model mean, undefined last, category order on ties
        cat_rows.sort_by(|(ia, a), (ib, b)| {
            let key = |r: &GroupRow| r.model_mean.map(printed_milli);
            key(b).cmp(&key(a)).then(ia.cmp(ib))
        });
    }
    let categories = GroupTable {
        title: "Inter-rater agreement by story grammar category (Cohen's kappa)".into(),
        group_heading: "Story grammar elements".into(),
        model_columns: spec.models.iter().map(|m| model_column(m)).collect(),
        rows: cat_rows.into_iter().map(|(_, r)| r).collect(),
    };

    // by cohort
    let cohort_of = |a: &str, b: &str| kappa_by_cohort(store, a, b);
    let hh_coh = match humans.as_slice() {
        [h1, h2, ..] => {
            let r = cohort_of(h1, h2)?;
            notes.extend(r.notes.iter().map(|n| format!("{h1} vs {h2}: {n}")));
            Some(r.results)
        }
        _ => None,
    };
    let mut per_model_coh = Vec::new();
    for m in &spec.models {
        let tables: Vec<BTreeMap<Cohort, KappaResult>> = humans
            .iter()
            .map(|h| cohort_of(m, h).map(|r| r.results))
            .collect::<Result<_, _>>()?;
        per_model_coh.push(tables);
    }
    let mut cohorts_sorted = Cohort::ALL.to_vec();
    cohorts_sorted.sort_by_key(|c| c.short_code());
    let mut coh_rows = Vec::new();
    for c in cohorts_sorted {
        let hh = hh_coh
            .as_ref()
            .and_then(|t| t.get(&c))
            .and_then(|k| k.kappa);
        let present_hh = hh_coh.as_ref().is_some_and(|t| t.contains_key(&c));
        let models: Vec<Option<f64>> = per_model_coh
            .iter()
            .map(|tables| {
                let ks: Vec<Option<f64>> = tables
                    .iter()
                    .map(|t| t.get(&c).and_then(|k| k.kappa))
                    .collect();
                match ks.as_slice() {
                    [k] => *k,
                    [k1, k2, ..] => mean_of_two(*k1, *k2),
                    [] => None,
                }
            })
            .collect();
        let present_models = per_model_coh
            .iter()
            .any(|tables| tables.iter().any(|t| t.contains_key(&c)));
        if !present_hh && !present_models {
            continue;
        }
        let label = format!("{} ({})", c.short_code(), capitalized(c.as_str()));
        coh_rows.push(group_row(label, hh, models));
    }
    let cohorts = GroupTable {
        title: "Inter-rater agreement across age groups (Cohen's kappa)".into(),
        group_heading: "Group".into(),
        model_columns: spec.models.iter().map(|m| model_column(m)).collect(),
        rows: coh_rows,
    };

    let scores = raters
        .iter()
        .map(|r| score_summary(store, r))
        .collect::<Vec<_>>();

    let costs = manifests.iter().map(cost_row).collect();

    Ok(Report {
        overall,
        categories,
        cohorts,
        scores,
        costs,
        workflow: workflow.map(workflow_savings),
        notes,
    })
}

fn capitalized(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub narrative_id: String,
    pub rater_id: String,
    pub story: Story,
    pub score: u32,
    pub present: Vec<String>,
}

/// Story-structure score of every annotation in the store.
pub fn score_rows(store: &AnnotationStore) -> Vec<ScoreRow> {
    let mut out = Vec::new();
    for rater in store.raters() {
        for a in store
            .annotations(rater)
            .into_iter()
            .flat_map(|m| m.values())
        {
            let p = to_presence(a);
            out.push(ScoreRow {
                narrative_id: a.narrative_id.clone(),
                rater_id: a.rater_id.clone(),
                story: a.story,
                score: story_structure_score(&p),
                present: a
                    .positions
                    .iter()
                    .filter(|(_, s)| !s.is_empty())
                    .map(|(e, _)| e.label().to_string())
                    .collect(),
            });
        }
    }
    out
}

fn score_summary(store: &AnnotationStore, rater: &str) -> ScoreSummary {
    let mut scores: Vec<u32> = store
        .annotations(rater)
        .into_iter()
        .flat_map(|m| m.values())
        .map(|a| story_structure_score(&to_presence(a)))
        .collect();
    scores.sort_unstable();
    let n = scores.len();
    let mut histogram = vec![0; ELEMENT_COUNT + 1];
    for &s in &scores {
        histogram[s as usize] += 1;
    }
    if n == 0 {
        return ScoreSummary {
            rater: rater.to_string(),
            narratives: 0,
            mean: 0.0,
            sd: 0.0,
            min: 0,
            median: 0.0,
            max: 0,
            histogram,
        };
    }
    let mean = scores.iter().map(|&s| s as f64).sum::<f64>() / n as f64;
    let var = if n > 1 {
        scores
            .iter()
            .map(|&s| (s as f64 - mean).powi(2))
            .sum::<f64>()
            / (n - 1) as f64
    } else {
        0.0
    };
    let median = if n % 2 == 1 {
        scores[n / 2] as f64
    } else {
        (scores[n / 2 - 1] + scores[n / 2]) as f64 / 2.0
    };
    ScoreSummary {
        rater: rater.to_string(),
        narratives: n,
        mean,
        sd: var.sqrt(),
        min: scores[0],
        median,
        max: scores[n - 1],
        histogram,
    }
}

fn cost_row(m: &RunManifest) -> CostRow {
    CostRow {
        profile: m.profile.clone(),
        model: m.model_name.clone(),
        narratives_ok: m.count(NarrativeStatus::Ok),
        narratives_failed: m.narratives.len() - m.count(NarrativeStatus::Ok),
        tokens: m.ledger.total_tokens,
        cost: m.ledger.cost,
        currency: m.ledger.currency.clone(),
        minutes: m.ledger.wall_time_ms as f64 / 60_000.0,
    }
}

fn k3(k: Option<f64>) -> String {
    crate::agreement::format_kappa(k)
}

impl Report {
    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Markdown => self.to_markdown(),
            ReportFormat::Csv => self.to_csv(),
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# Annotation agreement report\n");
        let _ = writeln!(
            s,
            "Items are (narrative, element) presence judgments pooled over both stories.\n"
        );

        let _ = writeln!(s, "## Inter-rater agreement (Cohen's kappa)\n");
        let _ = writeln!(s, "| Comparison pair | κ | interpretation | items |");
        let _ = writeln!(s, "|---|---|---|---|");
        for r in &self.overall {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} |",
                r.pair,
                k3(r.kappa),
                r.interpretation,
                r.items
            );
        }
        let details: Vec<&OverallRow> = self
            .overall
            .iter()
            .filter(|r| r.components.len() > 1)
            .collect();
        if !details.is_empty() {
            let _ = writeln!(s);
            for r in details {
                let parts: Vec<String> = r
                    .components
                    .iter()
                    .map(|(h, k)| format!("vs {h} {}", k3(*k)))
                    .collect();
                let _ = writeln!(s, "- {}: mean of {}", r.pair, parts.join(" and "));
            }
        }
        let _ = writeln!(s);

        for table in [&self.categories, &self.cohorts] {
            let _ = writeln!(s, "## {}\n", table.title);
            let mut head = vec![table.group_heading.clone(), "Human-human".to_string()];
            head.extend(table.model_columns.iter().cloned());
            head.push("Model mean".into());
            head.push("Interpretation".into());
            let _ = writeln!(s, "| {} |", head.join(" | "));
            let _ = writeln!(s, "|{}", "---|".repeat(head.len()));
            for r in &table.rows {
                let mut cells = vec![r.label.clone(), k3(r.human_human)];
                cells.extend(r.models.iter().map(|k| k3(*k)));
                cells.push(k3(r.model_mean));
                cells.push(r.interpretation.clone());
                let _ = writeln!(s, "| {} |", cells.join(" | "));
            }
            let _ = writeln!(
                s,
                "\nInterpretation: < 0.41 fair; 0.41-0.60 moderate; 0.61-0.80 substantial; 0.81-1.00 almost perfect.\n"
            );
        }

        let _ = writeln!(s, "## Story structure scores (0-17)\n");
        let _ = writeln!(s, "| Rater | narratives | mean | sd | min | median | max |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|");
        for r in &self.scores {
            let _ = writeln!(
                s,
                "| {} | {} | {:.2} | {:.2} | {} | {:.1} | {} |",
                r.rater, r.narratives, r.mean, r.sd, r.min, r.median, r.max
            );
        }
        let _ = writeln!(s);

        if !self.costs.is_empty() {
            let _ = writeln!(s, "## Cost and time\n");
            let _ = writeln!(
                s,
                "| Model | narratives ok | failed | tokens | cost | time (min) |"
            );
            let _ = writeln!(s, "|---|---|---|---|---|---|");
            for c in &self.costs {
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {:.4} {} | {:.1} |",
                    c.model,
                    c.narratives_ok,
                    c.narratives_failed,
                    c.tokens,
                    c.cost,
                    c.currency,
                    c.minutes
                );
            }
            let _ = writeln!(s);
        }

        if let Some(w) = &self.workflow {
            let _ = writeln!(s, "## Verification workflow\n");
            let _ = writeln!(s, "{}\n", workflow_line(w));
        }

        if !self.notes.is_empty() {
            let _ = writeln!(s, "## Notes\n");
            for n in &self.notes {
                let _ = writeln!(s, "- {n}");
            }
        }
        s
    }

    /// Long format: one `section,row,column,value` record per cell.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut put = |section: &str, row: &str, column: &str, value: String| {
            w.write_record([section, row, column, value.as_str()])
                .expect("writing to memory");
        };
        put("section", "row", "column", "value".into());
        for r in &self.overall {
            put("overall", &r.pair, "kappa", k3(r.kappa));
            put(
                "overall",
                &r.pair,
                "interpretation",
                r.interpretation.clone(),
            );
            put("overall", &r.pair, "items", r.items.to_string());
            for (h, k) in &r.components {
                put("overall", &r.pair, &format!("vs {h}"), k3(*k));
            }
        }
        for (section, table) in [("category", &self.categories), ("cohort", &self.cohorts)] {
            for r in &table.rows {
                put(section, &r.label, "Human-human", k3(r.human_human));
                for (col, k) in table.model_columns.iter().zip(&r.models) {
                    put(section, &r.label, col, k3(*k));
                }
                put(section, &r.label, "Model mean", k3(r.model_mean));
                put(
                    section,
                    &r.label,
                    "Interpretation",
                    r.interpretation.clone(),
                );
            }
        }
        for r in &self.scores {
            put("score", &r.rater, "narratives", r.narratives.to_string());
            put("score", &r.rater, "mean", format!("{:.2}", r.mean));
            put("score", &r.rater, "sd", format!("{:.2}", r.sd));
            put("score", &r.rater, "min", r.min.to_string());
            put("score", &r.rater, "median", format!("{:.1}", r.median));
            put("score", &r.rater, "max", r.max.to_string());
        }
        for c in &self.costs {
            put(
                "cost",
                &c.model,
                "narratives_ok",
                c.narratives_ok.to_string(),
            );
            put(
                "cost",
                &c.model,
                "narratives_failed",
                c.narratives_failed.to_string(),
            );
            put("cost", &c.model, "tokens", c.tokens.to_string());
            put("cost", &c.model, "cost", format!("{:.4}", c.cost));
            put("cost", &c.model, "currency", c.currency.clone());
            put("cost", &c.model, "minutes", format!("{:.1}", c.minutes));
        }
        if let Some(wf) = &self.workflow {
            put(
                "workflow",
                "manual",
                "minutes",
                format!("{:.1}", wf.manual_minutes),
            );
            put(
                "workflow",
                "assisted",
                "minutes",
                format!("{:.1}", wf.assisted_minutes),
            );
            put(
                "workflow",
                "reduction",
                "percent",
                format!("{:.1}", wf.reduction * 100.0),
            );
        }
        for n in &self.notes {
            put("note", "", "", n.clone());
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
    }
}

pub fn workflow_line(w: &WorkflowSavings) -> String {
    format!(
        "Manual annotation of {} stories at {} min each: {:.1} h. LLM-assisted: {:.1} h LLM + {:.1} h review = {:.1} h. Reduction: {:.1}%.",
        w.inputs.stories,
        w.inputs.baseline_minutes_per_story,
        w.manual_minutes / 60.0,
        w.inputs.llm_minutes / 60.0,
        w.inputs.review_minutes / 60.0,
        w.assisted_minutes / 60.0,
        w.reduction * 100.0
    )
}

/// The band a printed kappa falls in.
pub fn band_of_printed(k: f64) -> Band {
    Band::from_kappa(printed_milli(k) as f64 / 1000.0)
}
