//! Demographic analysis: PMI balancing, age groups, bootstrap d′ and
//! hypothesis tests.

mod hypothesis;
pub mod special;

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{dprime, EvalError};
use crate::metadata::SampleMetadata;

pub use hypothesis::{anova_oneway, kruskal_wallis, mid_ranks, TestResult, P_UNDERFLOW};

pub const DEFAULT_BALANCE_TOLERANCE: f64 = 0.05;
pub const DEFAULT_MIN_GROUP_SIZE: usize = 5;
pub const DEFAULT_BOOTSTRAP_REPS: usize = 30;
pub const DEFAULT_BOOTSTRAP_FRACTION: f64 = 0.5;
const MIN_BOOTSTRAP_SET: usize = 4;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("group {group} has fewer than {min} values")]
    GroupTooSmall { group: usize, min: usize },
    #[error("all values are identical")]
    AllIdentical,
    #[error("cannot balance group `{group}`: {reason}")]
    CannotBalance {
        group: String,
        reason: String,
        /// Sample ids removed before giving up, in order.
        removed: Vec<String>,
    },
    #[error("score sets need at least {min} values, got {genuine} genuine and {impostor} impostor")]
    SampleTooSmall {
        min: usize,
        genuine: usize,
        impostor: usize,
    },
    #[error("fraction {0} outside (0, 1]")]
    BadFraction(f64),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy)]
pub struct BalanceParams {
    /// Hours.
    pub tolerance: f64,
    pub min_size: usize,
}

impl Default for BalanceParams {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_BALANCE_TOLERANCE,
            min_size: DEFAULT_MIN_GROUP_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub group: String,
    pub sample_id: String,
    pub pmi_hours: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceOutcome {
    /// Remaining samples per group, sorted by PMI then sample id.
    pub groups: BTreeMap<String, Vec<SampleMetadata>>,
    pub means: BTreeMap<String, f64>,
    pub removed: Vec<Removal>,
}

fn mean_pmi(g: &[SampleMetadata]) -> f64 {
    g.iter().map(|s| s.pmi_hours).sum::<f64>() / g.len() as f64
}

/// Equalizes the mean PMI across groups by removing samples from the group
/// with the largest mean.
///
/// Each step removes the sample whose removal brings that group's mean
/// closest to the smallest group mean, preferring removals that do not drop
/// it more than `tolerance` below that mean. When only an overshooting
/// removal shrinks the gap it is taken, and a later step trims whichever
/// group then has the largest mean. If no single removal shrinks the gap,
/// the best pair is removed instead. The gap shrinks strictly at every step.
pub fn balance_pmi(
    groups: &BTreeMap<String, Vec<SampleMetadata>>,
    params: &BalanceParams,
) -> Result<BalanceOutcome, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups(groups.len()));
    }
    if let Some((i, _)) = groups.values().enumerate().find(|(_, g)| g.is_empty()) {
        return Err(StatsError::GroupTooSmall { group: i, min: 1 });
    }
    let mut work: BTreeMap<String, Vec<SampleMetadata>> = groups
        .iter()
        .map(|(k, v)| {
            let mut v = v.clone();
            v.sort_by(|a, b| {
                a.pmi_hours
                    .total_cmp(&b.pmi_hours)
                    .then_with(|| a.sample_id.cmp(&b.sample_id))
            });
            (k.clone(), v)
        })
        .collect();
    let mut removed: Vec<Removal> = Vec::new();
    loop {
        let means: BTreeMap<String, f64> = work.iter().map(|(k, v)| (k.clone(), mean_pmi(v))).collect();
        let target = means.values().copied().fold(f64::INFINITY, f64::min);
        // first label wins ties
        let (label, top) = means.iter().fold(
            (None, f64::NEG_INFINITY),
            |(bl, bm), (k, &m)| if m > bm { (Some(k), m) } else { (bl, bm) },
        );
        let label = label.expect("at least two groups").clone();
        let gap = top - target;
        if gap <= params.tolerance {
            return Ok(BalanceOutcome {
                groups: work,
                means,
                removed,
            });
        }
        let fail = |reason: String, removed: &[Removal]| StatsError::CannotBalance {
            group: label.clone(),
            reason,
            removed: removed.iter().map(|r| r.sample_id.clone()).collect(),
        };
        let group = &work[&label];
        if group.len() <= params.min_size.max(1) {
            return Err(fail(
                format!(
                    "mean gap {gap:.3} h remains and the group is at the minimum size {}",
                    params.min_size
                ),
                &removed,
            ));
        }
        let floor = params.min_size.max(1);
        let pick = pick_removal(group, target, params.tolerance, gap, 1).or_else(|| {
            // Every sample close above the mean is gone: a low and a high
            // sample together can still narrow the gap.
            (group.len() >= floor + 2)
                .then(|| pick_removal(group, target, params.tolerance, gap, 2))
                .flatten()
        });
        let Some(indices) = pick else {
            return Err(fail(format!("no removal reduces the mean gap {gap:.3} h"), &removed));
        };
        // Ascending PMI, so the group keeps the largest mean until the
        // last sample of the step is gone.
        let group = work.get_mut(&label).expect("label present");
        let taken: Vec<SampleMetadata> = indices.iter().rev().map(|&i| group.remove(i)).collect();
        for s in taken.into_iter().rev() {
            removed.push(Removal {
                group: label.clone(),
                sample_id: s.sample_id,
                pmi_hours: s.pmi_hours,
            });
        }
    }
}

/// Best set of `k` (1 or 2) samples to remove from a PMI-sorted group, as
/// ascending indices. Removals that keep the group mean within `tolerance`
/// of `target` are preferred; either way the new distance to `target`
/// must be below `gap`. Ties go to the smallest sample ids.
fn pick_removal(group: &[SampleMetadata], target: f64, tolerance: f64, gap: f64, k: usize) -> Option<Vec<usize>> {
    let n = group.len();
    if n <= k {
        return None;
    }
    let sum: f64 = group.iter().map(|s| s.pmi_hours).sum();
    let candidates: Box<dyn Iterator<Item = Vec<usize>>> = match k {
        1 => Box::new((0..n).map(|i| vec![i])),
        _ => Box::new((0..n).flat_map(|i| (i + 1..n).map(move |j| vec![i, j]))),
    };
    let ids = |c: &[usize]| -> Vec<&str> { c.iter().map(|&i| group[i].sample_id.as_str()).collect() };
    let mut best_any: Option<(f64, Vec<usize>)> = None;
    let mut best_within: Option<(f64, Vec<usize>)> = None;
    for c in candidates {
        let m = (sum - c.iter().map(|&i| group[i].pmi_hours).sum::<f64>()) / (n - k) as f64;
        let d = (m - target).abs();
        let better = |best: &Option<(f64, Vec<usize>)>| match best {
            None => true,
            Some((bd, bc)) => d < *bd || (d == *bd && ids(&c) < ids(bc)),
        };
        if m >= target - tolerance && better(&best_within) {
            best_within = Some((d, c.clone()));
        }
        if better(&best_any) {
            best_any = Some((d, c));
        }
    }
    best_within
        .filter(|(d, _)| *d < gap)
        .or(best_any)
        .filter(|(d, _)| *d < gap)
        .map(|(_, c)| c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgeGroup {
    Group1,
    Group2,
    Group3,
}

impl AgeGroup {
    pub const ALL: [AgeGroup; 3] = [AgeGroup::Group1, AgeGroup::Group2, AgeGroup::Group3];

    /// 1–33, 34–66 and 67–99 years, inclusive; other ages have no group.
    pub fn of(age_years: u32) -> Option<Self> {
        match age_years {
            1..=33 => Some(AgeGroup::Group1),
            34..=66 => Some(AgeGroup::Group2),
            67..=99 => Some(AgeGroup::Group3),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AgeGroup::Group1 => "group1",
            AgeGroup::Group2 => "group2",
            AgeGroup::Group3 => "group3",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgeSplit {
    pub groups: BTreeMap<AgeGroup, Vec<SampleMetadata>>,
    /// Samples whose age falls outside every group.
    pub excluded: Vec<SampleMetadata>,
}

pub fn split_age_groups(meta: &[SampleMetadata]) -> AgeSplit {
    let mut split = AgeSplit::default();
    for g in AgeGroup::ALL {
        split.groups.insert(g, Vec::new());
    }
    for m in meta {
        match AgeGroup::of(m.age_years) {
            Some(g) => split.groups.get_mut(&g).expect("all groups inserted").push(m.clone()),
            None => split.excluded.push(m.clone()),
        }
    }
    split
}

/// d′ over `reps` random subsets of `⌈frac·n⌉` scores drawn without
/// replacement from each set; rep `i` is seeded with `seed + i`.
pub fn bootstrap_dprime(
    genuine: &[f64],
    impostor: &[f64],
    reps: usize,
    frac: f64,
    seed: u64,
) -> Result<Vec<f64>, StatsError> {
    if genuine.len() < MIN_BOOTSTRAP_SET || impostor.len() < MIN_BOOTSTRAP_SET {
        return Err(StatsError::SampleTooSmall {
            min: MIN_BOOTSTRAP_SET,
            genuine: genuine.len(),
            impostor: impostor.len(),
        });
    }
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(StatsError::BadFraction(frac));
    }
    let take = |n: usize| ((frac * n as f64).ceil() as usize).clamp(1, n);
    let (kg, ki) = (take(genuine.len()), take(impostor.len()));
    (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(rep as u64));
            let g: Vec<f64> = index::sample(&mut rng, genuine.len(), kg)
                .into_iter()
                .map(|i| genuine[i])
                .collect();
            let i: Vec<f64> = index::sample(&mut rng, impostor.len(), ki)
                .into_iter()
                .map(|i| impostor[i])
                .collect();
            Ok(dprime(&g, &i)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metadata::{Eye, Gender};
    use rand_distr::{Distribution, Normal};

    fn sample(id: &str, pmi: f64) -> SampleMetadata {
        SampleMetadata {
            sample_id: id.into(),
            subject_id: id.into(),
            eye: Eye::Left,
            session: 1,
            pmi_hours: pmi,
            age_years: 40,
            gender: Gender::Unknown,
            image_path: String::new(),
        }
    }

    fn group(prefix: &str, pmis: &[f64]) -> Vec<SampleMetadata> {
        pmis.iter()
            .enumerate()
            .map(|(i, &p)| sample(&format!("{prefix}{i:03}"), p))
            .collect()
    }

    #[test]
    fn identical_groups_untouched() {
        let mut g = BTreeMap::new();
        g.insert("a".to_string(), group("a", &[1.0, 5.0, 9.0, 12.0, 30.0, 2.0]));
        g.insert("b".to_string(), group("b", &[30.0, 1.0, 5.0, 9.0, 12.0, 2.0]));
        let out = balance_pmi(&g, &BalanceParams::default()).unwrap();
        assert!(out.removed.is_empty());
        assert_eq!(out.groups["a"].len(), 6);
    }

    #[test]
    fn removes_the_outlier() {
        let mut g = BTreeMap::new();
        g.insert("A".to_string(), group("a", &[10.0, 20.0]));
        g.insert("B".to_string(), group("b", &[10.0, 20.0, 90.0]));
        let p = BalanceParams {
            tolerance: 0.05,
            min_size: 1,
        };
        let out = balance_pmi(&g, &p).unwrap();
        assert_eq!(out.removed.len(), 1);
        assert_eq!(out.removed[0].pmi_hours, 90.0);
        assert_eq!(out.means["A"], 15.0);
        assert_eq!(out.means["B"], 15.0);
    }

    #[test]
    fn pair_removal_when_no_single_one_helps() {
        let mut g = BTreeMap::new();
        g.insert("A".to_string(), group("a", &[10.0; 6]));
        g.insert(
            "B".to_string(),
            group("b", &[0.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 30.0]),
        );
        let p = BalanceParams {
            tolerance: 0.05,
            min_size: 1,
        };
        let out = balance_pmi(&g, &p).unwrap();
        let ids: Vec<&str> = out.removed.iter().map(|r| r.sample_id.as_str()).collect();
        assert_eq!(ids, ["b000", "b007"]);
        assert_eq!(out.means["B"], 10.0);
    }

    #[test]
    fn floor_prevents_balancing() {
        let mut g = BTreeMap::new();
        g.insert("small".to_string(), group("s", &[1.0]));
        g.insert(
            "big".to_string(),
            group("b", &(0..100).map(|i| 50.0 + i as f64).collect::<Vec<_>>()),
        );
        assert!(matches!(
            balance_pmi(&g, &BalanceParams::default()),
            Err(StatsError::CannotBalance { .. })
        ));
    }

    #[test]
    fn balanced_output_within_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Normal::new(60.0f64, 25.0).unwrap();
        let e = Normal::new(80.0f64, 25.0).unwrap();
        let mut g = BTreeMap::new();
        g.insert(
            "f".to_string(),
            group("f", &(0..80).map(|_| d.sample(&mut rng).abs()).collect::<Vec<_>>()),
        );
        g.insert(
            "m".to_string(),
            group("m", &(0..120).map(|_| e.sample(&mut rng).abs()).collect::<Vec<_>>()),
        );
        let before_f = mean_pmi(&g["f"]);
        let out = balance_pmi(&g, &BalanceParams::default()).unwrap();
        assert!((out.means["f"] - out.means["m"]).abs() <= 0.05);
        assert!(out.removed.iter().all(|r| r.group == "m"));
        assert!((out.means["f"] - before_f).abs() < 1e-9);
    }

    #[test]
    fn age_bounds() {
        assert_eq!(AgeGroup::of(33), Some(AgeGroup::Group1));
        assert_eq!(AgeGroup::of(34), Some(AgeGroup::Group2));
        assert_eq!(AgeGroup::of(66), Some(AgeGroup::Group2));
        assert_eq!(AgeGroup::of(99), Some(AgeGroup::Group3));
        assert_eq!(AgeGroup::of(0), None);
        assert_eq!(AgeGroup::of(100), None);
        let mut a = sample("x", 1.0);
        a.age_years = 0;
        let split = split_age_groups(&[a, sample("y", 2.0)]);
        assert_eq!(split.excluded.len(), 1);
        assert_eq!(split.groups[&AgeGroup::Group2].len(), 1);
    }

    #[test]
    fn bootstrap_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = Normal::new(0.0, 1.0).unwrap();
        let g: Vec<f64> = (0..10_000).map(|_| n.sample(&mut rng)).collect();
        let i: Vec<f64> = (0..10_000).map(|_| n.sample(&mut rng) + 3.0).collect();
        let a = bootstrap_dprime(&g, &i, 30, 0.5, 99).unwrap();
        let b = bootstrap_dprime(&g, &i, 30, 0.5, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
        assert!(a.iter().all(|d| (d - 3.0).abs() <= 0.15));
        let full = dprime(&g, &i).unwrap();
        for d in bootstrap_dprime(&g[..50], &i[..60], 5, 1.0, 1).unwrap() {
            assert!((d - dprime(&g[..50], &i[..60]).unwrap()).abs() < 1e-12);
        }
        assert!((full - 3.0).abs() < 0.1);
        assert!(matches!(
            bootstrap_dprime(&g[..3], &i, 30, 0.5, 0),
            Err(StatsError::SampleTooSmall { .. })
        ));
    }
}
