//! One-way ANOVA and Kruskal-Wallis.

use serde::{Deserialize, Serialize};

use super::special::{chi2_survival, f_survival};
use super::StatsError;

/// p-values below this are reported as 0 with `underflow` set.
pub const P_UNDERFLOW: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// F for ANOVA, H for Kruskal-Wallis.
    pub statistic: f64,
    pub p_value: f64,
    pub df1: f64,
    /// Denominator degrees of freedom (ANOVA only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df2: Option<f64>,
    pub underflow: bool,
    /// Set when a convention replaced an undefined statistic.
    pub degenerate: bool,
}

impl TestResult {
    fn new(statistic: f64, p: f64, df1: f64, df2: Option<f64>, degenerate: bool) -> Self {
        let p = p.clamp(0.0, 1.0);
        let underflow = p < P_UNDERFLOW && !degenerate;
        Self {
            statistic,
            p_value: if underflow { 0.0 } else { p },
            df1,
            df2,
            underflow,
            degenerate,
        }
    }
}

pub fn anova_oneway(groups: &[Vec<f64>]) -> Result<TestResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups(groups.len()));
    }
    if let Some(g) = groups.iter().position(|g| g.len() < 2) {
        return Err(StatsError::GroupTooSmall { group: g, min: 2 });
    }
    let k = groups.len() as f64;
    let n: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        ss_between += g.len() as f64 * (m - grand).powi(2);
        ss_within += g.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    let (d1, d2) = (k - 1.0, n as f64 - k);
    if ss_within == 0.0 {
        if ss_between == 0.0 {
            return Err(StatsError::AllIdentical);
        }
        return Ok(TestResult::new(f64::INFINITY, 0.0, d1, Some(d2), true));
    }
    let f = (ss_between / d1) / (ss_within / d2);
    Ok(TestResult::new(f, f_survival(f, d1, d2), d1, Some(d2), false))
}

/// Mid-ranks (1-based) of `values`, plus the tie-group sizes.
pub fn mid_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = rank;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups(groups.len()));
    }
    if let Some(g) = groups.iter().position(Vec::is_empty) {
        return Err(StatsError::GroupTooSmall { group: g, min: 1 });
    }
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = pooled.len() as f64;
    let df = groups.len() as f64 - 1.0;
    let (ranks, ties) = mid_ranks(&pooled);
    let correction = 1.0 - ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum::<f64>() / (n.powi(3) - n);
    if correction <= 0.0 {
        return Ok(TestResult::new(0.0, 1.0, df, None, true));
    }
    let mut h = 0.0;
    let mut offset = 0;
    for g in groups {
        let r_mean = ranks[offset..offset + g.len()].iter().sum::<f64>() / g.len() as f64;
        h += g.len() as f64 * (r_mean - (n + 1.0) / 2.0).powi(2);
        offset += g.len();
    }
    h *= 12.0 / (n * (n + 1.0));
    h /= correction;
    Ok(TestResult::new(h, chi2_survival(h, df), df, None, false))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anova_identical_groups() {
        let r = anova_oneway(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn anova_textbook() {
        let g = vec![
            vec![1.0, 2.0, 3.0, 4.0],
            vec![2.0, 3.0, 4.0, 5.0],
            vec![3.0, 4.0, 5.0, 6.0],
        ];
        let r = anova_oneway(&g).unwrap();
        // means 2.5, 3.5, 4.5; grand 3.5; SSB = 4*(1+0+1) = 8; SSW = 3*5 = 15
        let f = (8.0 / 2.0) / (15.0 / 9.0);
        assert!((r.statistic - f).abs() < 1e-12);
        assert_eq!((r.df1, r.df2), (2.0, Some(9.0)));
        let fd = statrs::distribution::FisherSnedecor::new(2.0, 9.0).unwrap();
        use statrs::distribution::ContinuousCDF;
        assert!((r.p_value - (1.0 - fd.cdf(f))).abs() < 1e-9);
    }

    #[test]
    fn anova_affine_invariance() {
        let g = vec![vec![1.0, 2.5, 3.0], vec![2.0, 3.3, 4.1, 5.0], vec![0.3, 4.0, 5.0]];
        let base = anova_oneway(&g).unwrap().statistic;
        let shifted: Vec<Vec<f64>> = g.iter().map(|v| v.iter().map(|x| 3.0 * x + 7.0).collect()).collect();
        assert!((anova_oneway(&shifted).unwrap().statistic - base).abs() < 1e-9);
    }

    #[test]
    fn anova_degenerate() {
        let r = anova_oneway(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 0.0);
        assert!(matches!(
            anova_oneway(&[vec![1.0, 1.0], vec![1.0, 1.0]]),
            Err(StatsError::AllIdentical)
        ));
        assert!(anova_oneway(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn kruskal_examples() {
        let r = kruskal_wallis(&[vec![5.0, 5.0], vec![5.0]]).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        let r = kruskal_wallis(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        // ranks 1.5 and 3.5 against a mean rank of 2.5
        let h = 12.0 / (4.0 * 5.0) * (2.0 * 1.0 + 2.0 * 1.0);
        assert!((r.statistic - h).abs() < 1e-12);
        assert!((h - 2.4).abs() < 1e-12);
        let far = kruskal_wallis(&[(0..30).map(f64::from).collect(), (100..130).map(f64::from).collect()]).unwrap();
        assert!(far.p_value < 1e-6);
    }

    #[test]
    fn kruskal_monotone_invariance() {
        let g = vec![vec![0.3, 1.2, 2.2, 0.9], vec![2.0, 3.1, 0.4], vec![1.5, 1.5, 4.0]];
        let base = kruskal_wallis(&g).unwrap();
        let t: Vec<Vec<f64>> = g
            .iter()
            .map(|v| v.iter().map(|x| x.exp() * 2.0 - 1.0).collect())
            .collect();
        let other = kruskal_wallis(&t).unwrap();
        assert!((base.statistic - other.statistic).abs() < 1e-12);
        assert!((base.p_value - other.p_value).abs() < 1e-12);
    }

    #[test]
    fn underflow_flag() {
        let a: Vec<f64> = (0..400).map(|i| i as f64 * 1e-3).collect();
        let b: Vec<f64> = (0..400).map(|i| 1000.0 + i as f64 * 1e-3).collect();
        let r = anova_oneway(&[a, b]).unwrap();
        assert!(r.underflow);
        assert_eq!(r.p_value, 0.0);
    }
}
