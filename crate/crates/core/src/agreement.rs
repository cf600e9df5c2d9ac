//! Cohen's kappa over per-element presence judgments.
//!
//! The unit of analysis is one item per (narrative, element): both raters
//! say present or absent. Tables can be pooled over elements of a category
//! or over the narratives of a cohort.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat::Cohort;
use crate::rubric::{AnnotationSet, Category, ElementId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AgreementError {
    #[error("no items to compare")]
    EmptyItems,
    #[error("no annotations for rater {0:?}")]
    UnknownRater(String),
    #[error("raters {0:?} and {1:?} share no narratives")]
    NoSharedNarratives(String, String),
}

/// 2x2 contingency counts. `a`: both present, `b`: only rater A,
/// `c`: only rater B, `d`: both absent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contingency {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl Contingency {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Self { a, b, c, d }
    }

    pub fn n(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    pub fn record(&mut self, rater_a: bool, rater_b: bool) {
        match (rater_a, rater_b) {
            (true, true) => self.a += 1,
            (true, false) => self.b += 1,
            (false, true) => self.c += 1,
            (false, false) => self.d += 1,
        }
    }

    pub fn transposed(&self) -> Self {
        Self::new(self.a, self.c, self.b, self.d)
    }
}

impl std::ops::Add for Contingency {
    type Output = Contingency;

    fn add(self, o: Contingency) -> Contingency {
        Contingency::new(self.a + o.a, self.b + o.b, self.c + o.c, self.d + o.d)
    }
}

impl std::iter::Sum for Contingency {
    fn sum<I: Iterator<Item = Contingency>>(iter: I) -> Self {
        iter.fold(Contingency::default(), |acc, t| acc + t)
    }
}

/// Interpretation bands, as printed under the agreement tables:
/// `< 0.41` fair, `0.41-0.60` moderate, `0.61-0.80` substantial,
/// `0.81-1.00` almost perfect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Fair,
    Moderate,
    Substantial,
    AlmostPerfect,
}

impl Band {
    /// Thresholds are lower bounds: a value counts as moderate from 0.41 up
    /// to (not including) 0.61, and so on.
    pub fn from_kappa(kappa: f64) -> Band {
        const EPS: f64 = 1e-9;
        if kappa + EPS >= 0.81 {
            Band::AlmostPerfect
        } else if kappa + EPS >= 0.61 {
            Band::Substantial
        } else if kappa + EPS >= 0.41 {
            Band::Moderate
        } else {
            Band::Fair
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Band::Fair => "fair",
            Band::Moderate => "moderate",
            Band::Substantial => "substantial",
            Band::AlmostPerfect => "almost perfect",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub fn interpretation(kappa: Option<f64>) -> &'static str {
    kappa.map(|k| Band::from_kappa(k).label()).unwrap_or("NA")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub n: u64,
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
    pub p_o: f64,
    pub p_e: f64,
    /// `None` when both raters used a single category (expected agreement 1).
    pub kappa: Option<f64>,
    pub band: Option<Band>,
}

impl KappaResult {
    pub fn table(&self) -> Contingency {
        Contingency::new(self.a, self.b, self.c, self.d)
    }

    pub fn is_degenerate(&self) -> bool {
        self.kappa.is_none()
    }
}

/// Cohen's kappa of a contingency table.
///
/// Kappa is evaluated as `2(ad - bc) / ((a+b)(b+d) + (a+c)(c+d))`, which is
/// `(p_o - p_e) / (1 - p_e)` with the common `n^2` cancelled, so only one
/// rounding step happens.
pub fn kappa_from_table(t: Contingency) -> Result<KappaResult, AgreementError> {
    let n = t.n();
    if n == 0 {
        return Err(AgreementError::EmptyItems);
    }
    let (a, b, c, d) = (t.a as i128, t.b as i128, t.c as i128, t.d as i128);
    let nn = (n as i128) * (n as i128);
    let p_o = (a + d) as f64 / n as f64;
    let p_e = ((a + b) * (a + c) + (c + d) * (b + d)) as f64 / nn as f64;
    let denom = (a + b) * (b + d) + (a + c) * (c + d);
    let kappa = (denom != 0).then(|| (2 * (a * d - b * c)) as f64 / denom as f64);
    Ok(KappaResult {
        n,
        a: t.a,
        b: t.b,
        c: t.c,
        d: t.d,
        p_o,
        p_e,
        kappa,
        band: kappa.map(Band::from_kappa),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub narrative_id: String,
    pub element: ElementId,
    pub cohort: Option<Cohort>,
    pub rater_a: bool,
    pub rater_b: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemJudgments {
    pub items: Vec<Item>,
    /// Narratives annotated by only one of the two raters.
    pub excluded_narratives: usize,
}

impl ItemJudgments {
    pub fn table(&self) -> Contingency {
        self.table_where(|_| true)
    }

    pub fn table_where(&self, keep: impl Fn(&Item) -> bool) -> Contingency {
        let mut t = Contingency::default();
        for item in self.items.iter().filter(|i| keep(i)) {
            t.record(item.rater_a, item.rater_b);
        }
        t
    }

    pub fn swapped(&self) -> ItemJudgments {
        ItemJudgments {
            items: self
                .items
                .iter()
                .map(|i| Item {
                    rater_a: i.rater_b,
                    rater_b: i.rater_a,
                    ..i.clone()
                })
                .collect(),
            excluded_narratives: self.excluded_narratives,
        }
    }
}

pub fn cohen_kappa(j: &ItemJudgments) -> Result<KappaResult, AgreementError> {
    kappa_from_table(j.table())
}

/// Which items a kappa is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scope", content = "value")]
pub enum Scope {
    Overall,
    Category(Category),
    Cohort(Cohort),
}

impl Scope {
    pub fn contains(&self, item: &Item) -> bool {
        match self {
            Scope::Overall => true,
            Scope::Category(c) => item.element.category() == *c,
            Scope::Cohort(c) => item.cohort == Some(*c),
        }
    }
}

/// Annotation sets of several raters over a corpus, plus narrative cohorts.
#[derive(Debug, Clone, Default)]
pub struct AnnotationStore {
    by_rater: BTreeMap<String, BTreeMap<String, AnnotationSet>>,
    cohorts: BTreeMap<String, Cohort>,
}

impl AnnotationStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an annotation, returning any previous one for the same rater and
    /// narrative.
    pub fn insert(&mut self, a: AnnotationSet) -> Option<AnnotationSet> {
        self.by_rater
            .entry(a.rater_id.clone())
            .or_default()
            .insert(a.narrative_id.clone(), a)
    }

    pub fn set_cohort(&mut self, narrative_id: impl Into<String>, cohort: Cohort) {
        self.cohorts.insert(narrative_id.into(), cohort);
    }

    pub fn cohort(&self, narrative_id: &str) -> Option<Cohort> {
        self.cohorts.get(narrative_id).copied()
    }

    pub fn raters(&self) -> impl Iterator<Item = &str> {
        self.by_rater.keys().map(String::as_str)
    }

    pub fn annotations(&self, rater: &str) -> Option<&BTreeMap<String, AnnotationSet>> {
        self.by_rater.get(rater)
    }

    /// Presence judgments of two raters on every narrative both annotated.
    pub fn judgments(&self, rater_a: &str, rater_b: &str) -> Result<ItemJudgments, AgreementError> {
        let sets_a = self
            .by_rater
            .get(rater_a)
            .ok_or_else(|| AgreementError::UnknownRater(rater_a.to_string()))?;
        let sets_b = self
            .by_rater
            .get(rater_b)
            .ok_or_else(|| AgreementError::UnknownRater(rater_b.to_string()))?;
        let ids_a: BTreeSet<&String> = sets_a.keys().collect();
        let ids_b: BTreeSet<&String> = sets_b.keys().collect();
        let shared: Vec<&String> = ids_a.intersection(&ids_b).copied().collect();
        if shared.is_empty() {
            return Err(AgreementError::NoSharedNarratives(
                rater_a.to_string(),
                rater_b.to_string(),
            ));
        }
        let excluded = ids_a.union(&ids_b).count() - shared.len();
        let mut items = Vec::with_capacity(shared.len() * 17);
        for id in shared {
            let (x, y) = (&sets_a[id], &sets_b[id]);
            for e in ElementId::all() {
                items.push(Item {
                    narrative_id: id.clone(),
                    element: e,
                    cohort: self.cohort(id),
                    rater_a: x.positions.is_present(e),
                    rater_b: y.positions.is_present(e),
                });
            }
        }
        Ok(ItemJudgments {
            items,
            excluded_narratives: excluded,
        })
    }

    pub fn kappa(
        &self,
        rater_a: &str,
        rater_b: &str,
        scope: Scope,
    ) -> Result<KappaResult, AgreementError> {
        let j = self.judgments(rater_a, rater_b)?;
        kappa_from_table(j.table_where(|i| scope.contains(i)))
    }
}

/// One result per category, pooling all of its elements across narratives.
pub fn kappa_by_category(
    store: &AnnotationStore,
    rater_a: &str,
    rater_b: &str,
) -> Result<BTreeMap<Category, KappaResult>, AgreementError> {
    let j = store.judgments(rater_a, rater_b)?;
    Category::ALL
        .iter()
        .map(|&c| {
            let t = j.table_where(|i| i.element.category() == c);
            kappa_from_table(t).map(|k| (c, k))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortKappas {
    pub results: BTreeMap<Cohort, KappaResult>,
    pub notes: Vec<String>,
}

/// One result per cohort present in the shared narratives, all 17 elements
/// pooled.
pub fn kappa_by_cohort(
    store: &AnnotationStore,
    rater_a: &str,
    rater_b: &str,
) -> Result<CohortKappas, AgreementError> {
    let j = store.judgments(rater_a, rater_b)?;
    let mut results = BTreeMap::new();
    let mut notes = Vec::new();
    for c in Cohort::ALL {
        let t = j.table_where(|i| i.cohort == Some(c));
        if t.n() == 0 {
            notes.push(format!("no shared narratives in cohort {c}"));
        } else {
            results.insert(c, kappa_from_table(t)?);
        }
    }
    let unassigned: BTreeSet<&str> = j
        .items
        .iter()
        .filter(|i| i.cohort.is_none())
        .map(|i| i.narrative_id.as_str())
        .collect();
    if !unassigned.is_empty() {
        notes.push(format!(
            "{} narratives without a cohort left out",
            unassigned.len()
        ));
    }
    Ok(CohortKappas { results, notes })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HumanModelKappa {
    pub model: String,
    pub versus_first: KappaResult,
    pub versus_second: KappaResult,
    /// Mean of the two unrounded kappas.
    pub mean: Option<f64>,
    pub note: Option<String>,
}

impl HumanModelKappa {
    pub fn band(&self) -> Option<Band> {
        self.mean.map(Band::from_kappa)
    }
}

pub fn mean_of_two(first: Option<f64>, second: Option<f64>) -> Option<f64> {
    Some((first? + second?) / 2.0)
}

/// Agreement of a model with each of two human raters, and their mean.
pub fn human_llm_kappa(
    store: &AnnotationStore,
    model: &str,
    human_1: &str,
    human_2: &str,
    scope: Scope,
) -> Result<HumanModelKappa, AgreementError> {
    let versus_first = store.kappa(model, human_1, scope)?;
    let versus_second = store.kappa(model, human_2, scope)?;
    let mean = mean_of_two(versus_first.kappa, versus_second.kappa);
    let note = mean
        .is_none()
        .then(|| "one of the pairwise kappas is undefined (single-category ratings)".to_string());
    Ok(HumanModelKappa {
        model: model.to_string(),
        versus_first,
        versus_second,
        mean,
        note,
    })
}

/// Three-decimal display, `NA` for undefined.
pub fn format_kappa(kappa: Option<f64>) -> String {
    match kappa {
        Some(k) => format!("{:.3}", round_half_up(k, 3)),
        None => "NA".to_string(),
    }
}

pub fn round_half_up(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    // nudge values a hair below a printed .5 boundary, e.g. 0.7665
    ((x * scale) + 0.5 + 1e-9).floor() / scale
}
