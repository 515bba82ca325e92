//! Curriculum labeling and the early-stop rule.
//!
//! A nodule is easy under the rating criterion when radiologists scored it
//! clearly benign (1) or clearly malignant (5), and easy under the
//! diameter criterion when it falls outside the ambiguous 5-12 mm
//! mid-range. Training on a subset stops once validation accuracy drops
//! strictly below the minimum of the previous three epochs.

use crate::datapipe::NoduleRecord;
use crate::error::{ProcanError, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DifficultyCriterion {
    Rating,
    Diameter,
    None,
}

impl DifficultyCriterion {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rating" => Ok(DifficultyCriterion::Rating),
            "diameter" => Ok(DifficultyCriterion::Diameter),
            "none" => Ok(DifficultyCriterion::None),
            other => Err(ProcanError::config(format!(
                "unknown curriculum criterion '{other}' (expected rating, diameter, none)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DifficultyCriterion::Rating => "rating",
            DifficultyCriterion::Diameter => "diameter",
            DifficultyCriterion::None => "none",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Hard,
}

/// Label one record easy or hard. Pure: the same record and criterion
/// always yield the same label.
pub fn classify(record: &NoduleRecord, criterion: DifficultyCriterion) -> Result<Difficulty> {
    match criterion {
        DifficultyCriterion::None => Ok(Difficulty::Easy),
        DifficultyCriterion::Rating => {
            let rating = record.median_rating.ok_or_else(|| {
                ProcanError::data(format!(
                    "record '{}' has no median rating but the rating criterion needs one",
                    record.id
                ))
            })?;
            match rating {
                1 | 5 => Ok(Difficulty::Easy),
                2 | 4 => Ok(Difficulty::Hard),
                3 => Err(ProcanError::data(format!(
                    "record '{}' has median rating 3, which must be excluded upstream",
                    record.id
                ))),
                other => Err(ProcanError::data(format!(
                    "record '{}' has median rating {other} outside 1-5",
                    record.id
                ))),
            }
        }
        DifficultyCriterion::Diameter => {
            if record.diameter_mm <= 0.0 {
                return Err(ProcanError::data(format!(
                    "record '{}' has non-positive diameter {}",
                    record.id, record.diameter_mm
                )));
            }
            if (5.0..=12.0).contains(&record.diameter_mm) {
                Ok(Difficulty::Hard)
            } else {
                Ok(Difficulty::Easy)
            }
        }
    }
}

/// Split a dataset into (easy indices, all indices). The full set keeps
/// every record exactly once; the easy set is a subset of it.
pub fn partition(
    records: &[NoduleRecord],
    criterion: DifficultyCriterion,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut easy = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if classify(r, criterion)? == Difficulty::Easy {
            easy.push(i);
        }
    }
    Ok((easy, (0..records.len()).collect()))
}

/// Validation accuracies observed so far, newest last.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AccuracyHistory {
    values: Vec<f64>,
}

impl AccuracyHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, acc: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&acc) {
            return Err(ProcanError::data(format!(
                "accuracy must lie in [0,1], got {acc}"
            )));
        }
        self.values.push(acc);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// True once the newest accuracy is strictly below the minimum of the
/// three epochs before it. Needs at least four entries; ties continue.
pub fn should_stop(history: &AccuracyHistory) -> bool {
    let v = history.values();
    if v.len() < 4 {
        return false;
    }
    let newest = v[v.len() - 1];
    let floor = v[v.len() - 4..v.len() - 1]
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    newest < floor
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::{CtVolume, Label};
    use crate::numerics::Tensor;

    fn record(diameter: f64, rating: Option<u8>) -> NoduleRecord {
        NoduleRecord {
            id: "r".to_string(),
            volume_file: String::new(),
            volume: CtVolume {
                voxels: Tensor::zeros(&[2, 2, 2]),
                spacing: (1.0, 1.0, 1.0),
            },
            center_mm: (1.0, 1.0, 1.0),
            diameter_mm: diameter,
            median_rating: rating,
            label: Label::Benign,
        }
    }

    #[test]
    fn rating_truth_table() {
        for (rating, want) in [
            (1, Difficulty::Easy),
            (2, Difficulty::Hard),
            (4, Difficulty::Hard),
            (5, Difficulty::Easy),
        ] {
            let got = classify(&record(8.0, Some(rating)), DifficultyCriterion::Rating).unwrap();
            assert_eq!(got, want, "rating {rating}");
        }
        assert!(classify(&record(8.0, Some(3)), DifficultyCriterion::Rating).is_err());
        assert!(classify(&record(8.0, None), DifficultyCriterion::Rating).is_err());
    }

    #[test]
    fn diameter_truth_table_with_inclusive_bounds() {
        for (d, want) in [
            (4.9, Difficulty::Easy),
            (5.0, Difficulty::Hard),
            (12.0, Difficulty::Hard),
            (12.1, Difficulty::Easy),
            (3.0, Difficulty::Easy),
            (20.0, Difficulty::Easy),
            (8.0, Difficulty::Hard),
        ] {
            let got = classify(&record(d, None), DifficultyCriterion::Diameter).unwrap();
            assert_eq!(got, want, "diameter {d}");
        }
    }

    #[test]
    fn none_criterion_labels_everything_easy() {
        let recs: Vec<NoduleRecord> = [4.0, 8.0, 25.0]
            .iter()
            .map(|&d| record(d, Some(2)))
            .collect();
        let (easy, full) = partition(&recs, DifficultyCriterion::None).unwrap();
        assert_eq!(easy, vec![0, 1, 2]);
        assert_eq!(full, vec![0, 1, 2]);
    }

    #[test]
    fn partition_counts_and_containment() {
        let recs: Vec<NoduleRecord> = [3.0, 8.0, 20.0, 6.0, 11.0, 4.0, 13.0, 5.5, 30.0, 2.9]
            .iter()
            .map(|&d| record(d, None))
            .collect();
        let (easy, full) = partition(&recs, DifficultyCriterion::Diameter).unwrap();
        assert_eq!(full.len(), 10);
        assert_eq!(easy.len(), 6);
        assert!(easy.iter().all(|i| full.contains(i)));
        // Hard ones are exactly the mid-range diameters.
        let hard: Vec<usize> = full.iter().copied().filter(|i| !easy.contains(i)).collect();
        assert_eq!(hard, vec![1, 3, 4, 7]);
    }

    #[test]
    fn early_stop_examples() {
        let mut h = AccuracyHistory::new();
        for v in [0.90, 0.91, 0.89, 0.88] {
            h.push(v).unwrap();
        }
        assert!(should_stop(&h));

        let mut h2 = AccuracyHistory::new();
        for v in [0.90, 0.91, 0.89, 0.89] {
            h2.push(v).unwrap();
        }
        assert!(!should_stop(&h2));

        let mut h3 = AccuracyHistory::new();
        for v in [0.5, 0.4, 0.3] {
            h3.push(v).unwrap();
        }
        assert!(!should_stop(&h3));
    }

    #[test]
    fn early_stop_is_monotone_in_the_newest_entry() {
        let prefix = [0.8, 0.85, 0.82];
        let mut fired_at = None;
        for i in 0..=100 {
            let newest = i as f64 / 100.0;
            let mut h = AccuracyHistory::new();
            for &v in &prefix {
                h.push(v).unwrap();
            }
            h.push(newest).unwrap();
            if should_stop(&h) {
                fired_at = Some(newest);
            } else if let Some(limit) = fired_at {
                assert!(
                    newest > limit,
                    "stop rule fired at {limit} but not at {newest}"
                );
            }
        }
        assert!(fired_at.is_some());
    }

    #[test]
    fn history_rejects_out_of_range_values() {
        let mut h = AccuracyHistory::new();
        assert!(h.push(1.5).is_err());
        assert!(h.push(-0.1).is_err());
    }
}
