use serde::{Deserialize, Serialize};

/// Interpretation band of a 0–1 similarity score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Poor,
    Fair,
    Good,
    Excellent,
}

pub const OVERFIT_THRESHOLD: f64 = 0.99;

impl Category {
    /// Half-open bands: Poor [0, .6), Fair [.6, .8), Good [.8, .9), Excellent [.9, 1].
    pub fn of(value: f64) -> Self {
        if value >= 0.90 {
            Category::Excellent
        } else if value >= 0.80 {
            Category::Good
        } else if value >= 0.60 {
            Category::Fair
        } else {
            Category::Poor
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub name: String,
    pub value: f64,
    pub category: Category,
    /// Set when the score is at or above 0.99, which can indicate memorization.
    pub overfit: bool,
}

impl MetricScore {
    pub fn new(name: impl Into<String>, value: f64) -> Self {
        let value = value.clamp(0.0, 1.0);
        Self {
            name: name.into(),
            value,
            category: Category::of(value),
            overfit: value >= OVERFIT_THRESHOLD,
        }
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

/// A metric that could not be computed on degenerate input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedMetric {
    pub name: String,
    pub reason: String,
}

pub(crate) fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut n = 0usize;
    let mut s = 0.0;
    for v in values {
        n += 1;
        s += v;
    }
    (n > 0).then(|| s / n as f64)
}
