//! Answer normalization and the two scalar answer metrics.

use serde::{Deserialize, Serialize};

/// How a predicted answer is compared against gold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// Normalized string equality.
    ExactMatch,
    /// Normalized gold appears as a substring of the normalized prediction.
    AnswerRecall,
}

impl MetricKind {
    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::ExactMatch => "em",
            MetricKind::AnswerRecall => "recall",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "em" | "exact_match" => Some(MetricKind::ExactMatch),
            "recall" | "answer_recall" => Some(MetricKind::AnswerRecall),
            _ => None,
        }
    }
}

/// Canonical answer form: lowercase, trimmed, internal whitespace collapsed
/// to single spaces, and terminal punctuation (`.`, `,`, `!`, `?`) stripped.
///
/// No phrase stripping happens here: "The answer is 2" keeps its words.
pub fn normalize(answer: &str) -> String {
    let lowered = answer.to_lowercase();
    let collapsed: Vec<&str> = lowered.split_whitespace().collect();
    let mut joined = collapsed.join(" ");
    while joined.ends_with(['.', ',', '!', '?']) {
        joined.pop();
        // Punctuation may expose trailing spaces ("done ." → "done ").
        while joined.ends_with(' ') {
            joined.pop();
        }
    }
    joined
}

/// Scores one prediction against gold under the chosen metric (0.0 or 1.0).
pub fn score(metric: MetricKind, prediction: &str, gold: &str) -> f64 {
    let p = normalize(prediction);
    let g = normalize(gold);
    let hit = match metric {
        MetricKind::ExactMatch => p == g,
        MetricKind::AnswerRecall => p.contains(&g),
    };
    if hit {
        1.0
    } else {
        0.0
    }
}
