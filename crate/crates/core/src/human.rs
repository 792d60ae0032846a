//! Human-evaluation ratings and their aggregation into per-method means
//! and the user preference index (AUPI).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HumanError {
    #[error("{field} rating {value} outside 1..=10")]
    OutOfRange { field: &'static str, value: i64 },
    #[error("rating triple incomplete: missing {0}")]
    Incomplete(&'static str),
    #[error("no ratings to aggregate")]
    NoRatings,
}

impl HumanError {
    pub fn kind(&self) -> &'static str {
        match self {
            HumanError::OutOfRange { .. } => "rating_out_of_range",
            HumanError::Incomplete(_) => "rating_incomplete",
            HumanError::NoRatings => "no_ratings",
        }
    }
}

/// Perceived privacy protection, semantic & intent fidelity, social
/// acceptability & expressiveness; each an integer on 1–10.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingTriple {
    pub ppp: u8,
    pub sif: u8,
    pub sae: u8,
}

impl RatingTriple {
    /// Checks a possibly incomplete submission.
    pub fn checked(ppp: Option<i64>, sif: Option<i64>, sae: Option<i64>) -> Result<Self, HumanError> {
        let one = |field: &'static str, v: Option<i64>| -> Result<u8, HumanError> {
            let value = v.ok_or(HumanError::Incomplete(field))?;
            if !(1..=10).contains(&value) {
                return Err(HumanError::OutOfRange { field, value });
            }
            Ok(value as u8)
        };
        Ok(Self { ppp: one("ppp", ppp)?, sif: one("sif", sif)?, sae: one("sae", sae)? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanScores {
    pub ppp: f64,
    pub sif: f64,
    pub sae: f64,
    pub aupi: f64,
    pub ratings: usize,
}

/// AUPI: unweighted mean of the three dimension means.
pub fn aupi(ppp: f64, sif: f64, sae: f64) -> f64 {
    (ppp + sif + sae) / 3.0
}

/// Per-method dimension means over every (evaluator, sample) triple.
pub fn aggregate_human<'a>(
    ratings: impl IntoIterator<Item = (&'a str, &'a RatingTriple)>,
) -> Result<BTreeMap<String, HumanScores>, HumanError> {
    let mut sums: BTreeMap<String, ([u64; 3], usize)> = BTreeMap::new();
    for (method, r) in ratings {
        let (s, n) = sums.entry(method.to_string()).or_default();
        s[0] += u64::from(r.ppp);
        s[1] += u64::from(r.sif);
        s[2] += u64::from(r.sae);
        *n += 1;
    }
    if sums.is_empty() {
        return Err(HumanError::NoRatings);
    }
    Ok(sums
        .into_iter()
        .map(|(method, (s, n))| {
            let mean = |x: u64| x as f64 / n as f64;
            let (ppp, sif, sae) = (mean(s[0]), mean(s[1]), mean(s[2]));
            (method, HumanScores { ppp, sif, sae, aupi: aupi(ppp, sif, sae), ratings: n })
        })
        .collect())
}
