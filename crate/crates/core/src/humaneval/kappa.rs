use serde::{Deserialize, Serialize};

use super::StatsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub kappa: f64,
    pub mean_observed_agreement: f64,
    pub expected_agreement: f64,
    pub n_subjects: usize,
    pub n_raters: u32,
    pub n_categories: usize,
}

/// Fleiss' kappa for `counts[i][j]` = number of raters assigning subject `i`
/// to category `j`; every row must sum to `n_raters`. The result is not
/// clamped, so systematic disagreement gives a negative value.
pub fn fleiss_kappa<R: AsRef<[u32]>>(
    counts: &[R],
    n_raters: u32,
) -> Result<KappaResult, StatsError> {
    if counts.is_empty() {
        return Err(StatsError::Invalid("no subjects".into()));
    }
    if n_raters < 2 {
        return Err(StatsError::Invalid(
            "at least two raters per subject are required".into(),
        ));
    }
    let k = counts[0].as_ref().len();
    if k == 0 {
        return Err(StatsError::Invalid("no categories".into()));
    }
    let n = f64::from(n_raters);
    let mut totals = vec![0u64; k];
    let mut p_sum = 0.0;
    for (i, row) in counts.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != k {
            return Err(StatsError::Invalid(format!(
                "subject {i} has {} categories, expected {k}",
                row.len()
            )));
        }
        let sum: u64 = row.iter().map(|&c| u64::from(c)).sum();
        if sum != u64::from(n_raters) {
            return Err(StatsError::Invalid(format!(
                "subject {i} has {sum} ratings, expected {n_raters}"
            )));
        }
        let sq: f64 = row.iter().map(|&c| f64::from(c) * f64::from(c)).sum();
        p_sum += (sq - n) / (n * (n - 1.0));
        for (t, &c) in totals.iter_mut().zip(row) {
            *t += u64::from(c);
        }
    }
    let subjects = counts.len();
    let p_bar = p_sum / subjects as f64;
    let grand = subjects as f64 * n;
    let p_e: f64 = totals.iter().map(|&t| (t as f64 / grand).powi(2)).sum();
    if (1.0 - p_e).abs() < 1e-12 {
        return Err(StatsError::Degenerate);
    }
    Ok(KappaResult {
        kappa: (p_bar - p_e) / (1.0 - p_e),
        mean_observed_agreement: p_bar,
        expected_agreement: p_e,
        n_subjects: subjects,
        n_raters,
        n_categories: k,
    })
}
