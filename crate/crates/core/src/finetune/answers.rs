use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::FinetuneError;
use crate::dataset::QaEntry;
use crate::text::normalize_key;

#[derive(Serialize, Deserialize)]
struct AnswerSpaceRepr {
    labels: Vec<String>,
    min_count: usize,
}

/// Ordered answer labels: the classifier's output positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "AnswerSpaceRepr", into = "AnswerSpaceRepr")]
pub struct AnswerSpace {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    min_count: usize,
}

impl From<AnswerSpaceRepr> for AnswerSpace {
    fn from(r: AnswerSpaceRepr) -> Self {
        Self::from_labels(r.labels, r.min_count)
    }
}

impl From<AnswerSpace> for AnswerSpaceRepr {
    fn from(s: AnswerSpace) -> Self {
        Self { labels: s.labels, min_count: s.min_count }
    }
}

impl AnswerSpace {
    pub fn from_labels(labels: Vec<String>, min_count: usize) -> Self {
        let index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Self { labels, index, min_count }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    /// Position of an answer, compared in normalized form.
    pub fn index_of(&self, answer: &str) -> Option<usize> {
        self.index.get(&normalize_key(answer)).copied()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Every normalized answer occurring at least `min_count` times across all
/// answer lists, most frequent first, ties in lexicographic order.
pub fn build_answer_space(entries: &[QaEntry], min_count: usize) -> Result<AnswerSpace, FinetuneError> {
    if entries.is_empty() {
        return Err(FinetuneError::EmptyDataset);
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for answer in entries.iter().flat_map(|e| &e.answers) {
        let key = normalize_key(answer);
        if !key.is_empty() {
            *counts.entry(key).or_default() += 1;
        }
    }
    let mut labels: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count.max(1))
        .collect();
    if labels.is_empty() {
        return Err(FinetuneError::EmptyAnswerSpace);
    }
    labels.sort_by(|(a, ca), (b, cb)| cb.cmp(ca).then_with(|| a.cmp(b)));
    Ok(AnswerSpace::from_labels(
        labels.into_iter().map(|(l, _)| l).collect(),
        min_count,
    ))
}

/// Soft target per label: `min(count / 3, 1)` of the label among the
/// entry's answers; answers outside the space are dropped.
pub fn make_targets(entry: &QaEntry, space: &AnswerSpace) -> Vec<f64> {
    let mut targets = vec![0.0; space.len()];
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for a in &entry.answers {
        if let Some(i) = space.index_of(a) {
            *counts.entry(i).or_default() += 1;
        }
    }
    for (i, c) in counts {
        targets[i] = (c as f64 / 3.0).min(1.0);
    }
    targets
}
