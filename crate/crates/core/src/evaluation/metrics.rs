use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AssessmentResult, Instrument, PersonalityLabel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Fraction of (character, dimension) pairs whose letters match.
    pub acc_dim: f64,
    /// Fraction of characters matching on every dimension.
    pub acc_full: f64,
    /// Over per-dimension (score, label score) pairs; `None` when no label
    /// carries scores.
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub characters: usize,
}

/// Accuracy and error of predicted personalities against labels.
///
/// Every character in `results` needs a label with categorical information
/// for `instrument`. MSE/MAE use the characters whose labels carry scores.
pub fn compute_metrics(
    results: &BTreeMap<String, AssessmentResult>,
    labels: &BTreeMap<String, PersonalityLabel>,
    instrument: Instrument,
) -> Result<Metrics> {
    if results.is_empty() {
        return Err(Error::InvalidInput("no assessment results to score".into()));
    }
    let missing: Vec<String> = results
        .keys()
        .filter(|c| labels.get(*c).and_then(|l| l.letters(instrument)).is_none())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingLabel(missing));
    }

    let dims = instrument.dimensions().len();
    let mut dim_hits = 0usize;
    let mut full_hits = 0usize;
    let mut sq_err = 0.0;
    let mut abs_err = 0.0;
    let mut scored_pairs = 0usize;

    for (character, result) in results {
        if result.instrument != instrument {
            return Err(Error::InvalidInput(format!(
                "{character} was assessed with {} but metrics requested for {instrument}",
                result.instrument
            )));
        }
        let label = &labels[character];
        let expected = label.letters(instrument).unwrap_or_default();
        let predicted = result.letters();
        let hits = predicted.iter().zip(&expected).filter(|(p, e)| p == e).count();
        dim_hits += hits;
        if hits == dims {
            full_hits += 1;
        }
        if let Some(truth) = label.scores(instrument) {
            for (p, t) in result.scores.iter().zip(truth) {
                let d = p - t;
                sq_err += d * d;
                abs_err += d.abs();
                scored_pairs += 1;
            }
        }
    }

    let n = results.len();
    let (mse, mae) = if scored_pairs > 0 {
        (
            Some(sq_err / scored_pairs as f64),
            Some(abs_err / scored_pairs as f64),
        )
    } else {
        (None, None)
    };
    Ok(Metrics {
        acc_dim: dim_hits as f64 / (n * dims) as f64,
        acc_full: full_hits as f64 / n as f64,
        mse,
        mae,
        characters: n,
    })
}
