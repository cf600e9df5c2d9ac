//! Proportional stratified sampling of participants by cohort.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat::{Cohort, ParticipantMeta};

#[derive(Debug, Error, PartialEq)]
pub enum SampleError {
    #[error("sampling rate must be in (0, 1], got {0}")]
    InvalidRate(f64),
    #[error("participant {0} has no cohort")]
    MissingCohort(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSample {
    pub population: usize,
    pub selected: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub rate: f64,
    pub seed: u64,
    pub cohorts: BTreeMap<Cohort, CohortSample>,
    pub warnings: Vec<String>,
}

impl SampleResult {
    /// All selected participant ids, cohort by cohort.
    pub fn selected(&self) -> Vec<String> {
        self.cohorts
            .values()
            .flat_map(|c| c.selected.iter().cloned())
            .collect()
    }
}

/// Number drawn from a cohort of `size`: the ceiling of `rate * size`.
pub fn quota(rate: f64, size: usize) -> usize {
    // the epsilon keeps 0.15 * 20 = 3.0000000000000004 at 3
    ((rate * size as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Draw `quota(rate, n)` participants uniformly from each cohort. Duplicate
/// entries for one participant (one per story) count once. Ids are sorted
/// before drawing so the result depends only on the id set and the seed.
pub fn stratified_sample(
    participants: &[ParticipantMeta],
    rate: f64,
    seed: u64,
) -> Result<SampleResult, SampleError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(SampleError::InvalidRate(rate));
    }
    let mut by_cohort: BTreeMap<Cohort, BTreeSet<&str>> = BTreeMap::new();
    for p in participants {
        let c = p
            .cohort
            .ok_or_else(|| SampleError::MissingCohort(p.participant_id.clone()))?;
        by_cohort.entry(c).or_default().insert(&p.participant_id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cohorts = BTreeMap::new();
    let mut warnings = Vec::new();
    for c in Cohort::ALL {
        let Some(ids) = by_cohort.get(&c) else {
            warnings.push(format!("cohort {c} is empty, skipped"));
            continue;
        };
        let ids: Vec<&str> = ids.iter().copied().collect();
        let k = quota(rate, ids.len());
        let mut selected: Vec<String> = ids
            .choose_multiple(&mut rng, k)
            .map(|s| s.to_string())
            .collect();
        selected.sort();
        cohorts.insert(
            c,
            CohortSample {
                population: ids.len(),
                selected,
            },
        );
    }
    Ok(SampleResult {
        rate,
        seed,
        cohorts,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn population(sizes: [usize; 3]) -> Vec<ParticipantMeta> {
        let mut out = Vec::new();
        for (c, n) in Cohort::ALL.into_iter().zip(sizes) {
            for i in 0..n {
                out.push(ParticipantMeta {
                    participant_id: format!("{}{i:03}", c.short_code()),
                    cohort: Some(c),
                    age: None,
                });
            }
        }
        out
    }

    #[test]
    fn ceiling_quota() {
        assert_eq!(quota(0.15, 116), 18);
        assert_eq!(quota(0.15, 20), 3);
        assert_eq!(quota(0.15, 71), 11);
        assert_eq!(quota(1.0, 7), 7);
    }

    #[test]
    fn deterministic_and_stratified() {
        let pop = population([116, 20, 71]);
        let a = stratified_sample(&pop, 0.15, 7).unwrap();
        let b = stratified_sample(&pop, 0.15, 7).unwrap();
        assert_eq!(a, b);
        let counts: Vec<usize> = a.cohorts.values().map(|c| c.selected.len()).collect();
        assert_eq!(counts, vec![18, 3, 11]);
        assert_eq!(a.selected().len(), 32);
        let other = stratified_sample(&pop, 0.15, 8).unwrap();
        assert_ne!(a.selected(), other.selected());
    }

    #[test]
    fn stories_count_once() {
        let mut pop = population([4, 0, 0]);
        pop.extend(pop.clone());
        let r = stratified_sample(&pop, 1.0, 0).unwrap();
        assert_eq!(r.cohorts[&Cohort::Children].population, 4);
        assert_eq!(r.warnings.len(), 2);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            stratified_sample(&[], 0.0, 1),
            Err(SampleError::InvalidRate(_))
        ));
        let p = ParticipantMeta {
            participant_id: "x".into(),
            cohort: None,
            age: None,
        };
        assert_eq!(
            stratified_sample(&[p], 0.5, 1),
            Err(SampleError::MissingCohort("x".into()))
        );
    }
}
