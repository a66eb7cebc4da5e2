use serde::{Deserialize, Serialize};

use super::StatsError;

const EPS: f64 = 1e-15;
const FPMIN: f64 = 1e-300;
const MAX_ITER: usize = 10_000;

const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function (Lanczos approximation) for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin().abs()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_q_fraction(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / FPMIN;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = b + an / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Upper regularized incomplete gamma `Q(a, x)`.
pub fn regularized_gamma_q(a: f64, x: f64) -> f64 {
    if a <= 0.0 || x < 0.0 || a.is_nan() || x.is_nan() {
        return f64::NAN;
    }
    if x == 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    if x < a + 1.0 {
        (1.0 - gamma_p_series(a, x)).max(0.0)
    } else {
        gamma_q_fraction(a, x)
    }
}

/// `P(X >= x)` for a chi-squared variable with `df` degrees of freedom.
pub fn chi2_survival(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return if x.is_nan() { f64::NAN } else { 1.0 };
    }
    regularized_gamma_q(df / 2.0, x / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquaredTest {
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
}

/// Pearson's chi-squared test of independence on an `r x c` table.
pub fn chi_squared_test<R: AsRef<[f64]>>(table: &[R]) -> Result<ChiSquaredTest, StatsError> {
    let r = table.len();
    if r < 2 {
        return Err(StatsError::Invalid(
            "contingency table needs at least two rows".into(),
        ));
    }
    let c = table[0].as_ref().len();
    if c < 2 {
        return Err(StatsError::Invalid(
            "contingency table needs at least two columns".into(),
        ));
    }
    let mut row_sums = vec![0.0; r];
    let mut col_sums = vec![0.0; c];
    for (i, row) in table.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != c {
            return Err(StatsError::Invalid(format!(
                "row {i} has {} columns, expected {c}",
                row.len()
            )));
        }
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(StatsError::Invalid(format!(
                    "cell ({i}, {j}) = {v} is not a count"
                )));
            }
            row_sums[i] += v;
            col_sums[j] += v;
        }
    }
    if let Some(i) = row_sums.iter().position(|&s| s == 0.0) {
        return Err(StatsError::Invalid(format!("row {i} is empty")));
    }
    if let Some(j) = col_sums.iter().position(|&s| s == 0.0) {
        return Err(StatsError::Invalid(format!("column {j} is empty")));
    }
    let total: f64 = row_sums.iter().sum();
    let mut statistic = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &obs) in row.as_ref().iter().enumerate() {
            let expected = row_sums[i] * col_sums[j] / total;
            statistic += (obs - expected).powi(2) / expected;
        }
    }
    let df = ((r - 1) * (c - 1)) as u32;
    Ok(ChiSquaredTest {
        statistic,
        df,
        p_value: chi2_survival(statistic, f64::from(df)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed form for even degrees of freedom.
    fn survival_even_df(x: f64, df: u32) -> f64 {
        let h = x / 2.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..df / 2 {
            term *= h / f64::from(k);
            sum += term;
        }
        (-h).exp() * sum
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-13);
        assert!(ln_gamma(2.0).abs() < 1e-13);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-12);
        assert!((ln_gamma(0.1) - 2.252_712_651_734_206).abs() < 1e-10);
    }

    #[test]
    fn df_two_is_exponential() {
        for i in 0..400 {
            let x = f64::from(i) * 0.1;
            assert!(
                (chi2_survival(x, 2.0) - (-x / 2.0).exp()).abs() < 1e-9,
                "x={x}"
            );
        }
    }

    #[test]
    fn even_df_closed_form() {
        for df in [4, 6, 10, 20] {
            for i in 1..200 {
                let x = f64::from(i) * 0.25;
                let got = chi2_survival(x, f64::from(df));
                assert!(
                    (got - survival_even_df(x, df)).abs() < 1e-9,
                    "df={df} x={x}"
                );
            }
        }
    }

    #[test]
    fn df_one_matches_normal_tail() {
        // P(chi2_1 >= 3.841458820694124) = 0.05
        assert!((chi2_survival(3.841_458_820_694_124, 1.0) - 0.05).abs() < 1e-9);
    }

    #[test]
    fn edges() {
        assert_eq!(chi2_survival(0.0, 3.0), 1.0);
        assert_eq!(chi2_survival(-1.0, 3.0), 1.0);
        assert!(chi2_survival(f64::INFINITY, 3.0) == 0.0);
        assert!(regularized_gamma_q(0.0, 1.0).is_nan());
    }

    #[test]
    fn two_by_three_fixture() {
        let t = chi_squared_test(&[[20.0, 10.0, 10.0], [10.0, 10.0, 20.0]]).unwrap();
        assert!((t.statistic - 20.0 / 3.0).abs() < 1e-12);
        assert_eq!(t.df, 2);
        assert!((t.p_value - (-10.0f64 / 3.0).exp()).abs() < 1e-12);
        assert!((t.p_value - 0.0357).abs() < 5e-5);
    }

    #[test]
    fn invalid_tables() {
        assert!(chi_squared_test(&[[1.0, 2.0]]).is_err());
        assert!(chi_squared_test(&[[1.0], [2.0]]).is_err());
        assert!(chi_squared_test(&[[0.0, 2.0], [0.0, 3.0]]).is_err());
        assert!(chi_squared_test(&[[-1.0, 2.0], [1.0, 3.0]]).is_err());
    }
}
