use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

use super::Dataset;

/// Research/holdout partition; no individual appears on both sides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldoutPartition {
    pub research_indices: Vec<usize>,
    pub holdout_indices: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub shadow: Vec<usize>,
    pub test: Vec<usize>,
    pub repeat_id: u8,
    pub seed: u64,
}

pub const MAX_REPEAT_ID: u8 = 4;

/// Sets aside whole individuals so that the holdout row count is as close to
/// `fraction * n` as the group sizes allow.
///
/// Groups are shuffled with `seed`; among all achievable holdout sizes the
/// closest to the target is chosen (ties go to the smaller size) and the
/// subset realising it is reconstructed in shuffled order, so different seeds
/// select different individuals.
pub fn reserve_holdout(ds: &Dataset, fraction: f64, seed: u64) -> Result<HoldoutPartition> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!("holdout fraction {fraction} not in (0, 1)")));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut members: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, g) in ds.group_ids().iter().enumerate() {
        members
            .entry(g.as_str())
            .or_insert_with(|| {
                order.push(g.as_str());
                Vec::new()
            })
            .push(i);
    }
    if order.len() < 2 {
        return Err(Error::Infeasible(
            "holdout needs at least two distinct individuals".into(),
        ));
    }
    let mut rng = seed::rng(seed);
    order.shuffle(&mut rng);

    let n = ds.n_rows();
    let sizes: Vec<usize> = order.iter().map(|g| members[g].len()).collect();
    // parent[s] = index (in shuffled order) of the group whose addition first
    // reached total s; every earlier total was built from earlier groups only.
    const UNREACHED: usize = usize::MAX;
    let mut parent = vec![UNREACHED; n + 1];
    let mut reachable = vec![false; n + 1];
    reachable[0] = true;
    for (gi, &size) in sizes.iter().enumerate() {
        for s in (size..=n).rev() {
            if reachable[s - size] && !reachable[s] {
                reachable[s] = true;
                parent[s] = gi;
            }
        }
    }
    let target = fraction * n as f64;
    let best = (1..n)
        .filter(|&s| reachable[s])
        .min_by(|&a, &b| {
            let da = (a as f64 - target).abs();
            let db = (b as f64 - target).abs();
            da.partial_cmp(&db).unwrap().then(a.cmp(&b))
        })
        .ok_or_else(|| Error::Infeasible("no proper group subset exists".into()))?;

    let mut in_holdout = vec![false; order.len()];
    let mut s = best;
    while s > 0 {
        let gi = parent[s];
        in_holdout[gi] = true;
        s -= sizes[gi];
    }
    let mut research = Vec::with_capacity(n - best);
    let mut holdout = Vec::with_capacity(best);
    for (gi, g) in order.iter().enumerate() {
        if in_holdout[gi] {
            holdout.extend_from_slice(&members[g]);
        } else {
            research.extend_from_slice(&members[g]);
        }
    }
    research.sort_unstable();
    holdout.sort_unstable();
    Ok(HoldoutPartition {
        research_indices: research,
        holdout_indices: holdout,
        seed,
    })
}

/// Shuffles `rows` and cuts them into train/shadow/test thirds. Sizes differ
/// by at most one; remainder rows go to train, then shadow.
pub fn split_three_way(rows: &[usize], repeat_id: u8, seed: u64) -> Result<SplitIndices> {
    if rows.len() < 3 {
        return Err(Error::Argument(format!(
            "three-way split needs at least 3 rows, got {}",
            rows.len()
        )));
    }
    if repeat_id > MAX_REPEAT_ID {
        return Err(Error::Argument(format!(
            "repeat_id {repeat_id} outside 0..={MAX_REPEAT_ID}"
        )));
    }
    let mut perm = rows.to_vec();
    perm.shuffle(&mut seed::child_rng(seed, repeat_id as u64));
    let base = rows.len() / 3;
    let rem = rows.len() % 3;
    let n_train = base + usize::from(rem >= 1);
    let n_shadow = base + usize::from(rem >= 2);
    let mut train = perm[..n_train].to_vec();
    let mut shadow = perm[n_train..n_train + n_shadow].to_vec();
    let mut test = perm[n_train + n_shadow..].to_vec();
    train.sort_unstable();
    shadow.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices {
        train,
        shadow,
        test,
        repeat_id,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DataDictionary, Encoding, FeatureSpec, TargetSpec};
    use crate::matrix::Matrix;
    use std::collections::BTreeSet;

    fn grouped(group_of_row: &[usize]) -> Dataset {
        let n = group_of_row.len();
        let dict = DataDictionary {
            features: vec![FeatureSpec {
                name: "x".into(),
                indices: vec![0],
                encoding: Encoding::Float64,
            }],
            target: TargetSpec {
                name: "y".into(),
                classes: vec!["a".into(), "b".into()],
            },
        };
        Dataset::new(
            Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap(),
            (0..n).map(|i| i % 2).collect(),
            group_of_row.iter().map(|g| format!("ind{g}")).collect(),
            dict,
        )
        .unwrap()
    }

    #[test]
    fn singleton_groups_give_exact_fraction() {
        let ds = grouped(&(0..100).collect::<Vec<_>>());
        for seed in [0, 1, 99] {
            let p = reserve_holdout(&ds, 0.2, seed).unwrap();
            assert_eq!(p.holdout_indices.len(), 20);
            assert_eq!(p.research_indices.len(), 80);
        }
    }

    #[test]
    fn episodic_rows_stay_together() {
        let mut groups: Vec<usize> = (0..20).collect();
        groups.extend([7, 7]);
        let ds = grouped(&groups);
        for seed in 0..20 {
            let p = reserve_holdout(&ds, 0.3, seed).unwrap();
            let rows_of_7 = [7usize, 20, 21];
            let in_hold = rows_of_7.iter().filter(|r| p.holdout_indices.contains(r)).count();
            assert!(in_hold == 0 || in_hold == 3);
        }
    }

    /// Brute force over all group assignments: the only proper subsets of
    /// {7, 3} are {7} and {3}; |3 - 5| = |7 - 5| ties, smaller wins.
    #[test]
    fn closest_group_subset() {
        let mut groups = vec![0; 7];
        groups.extend([1; 3]);
        let ds = grouped(&groups);
        let target = 0.5 * 10.0;
        let sizes = [7usize, 3];
        let mut best = None;
        for mask in 1..3u32 {
            let s: usize = (0..2).filter(|b| mask & (1 << b) != 0).map(|b| sizes[b]).sum();
            let d = (s as f64 - target).abs();
            if best.map_or(true, |(bd, bs)| d < bd || (d == bd && s < bs)) {
                best = Some((d, s));
            }
        }
        let expected = best.unwrap().1;
        assert_eq!(expected, 3);
        for seed in 0..10 {
            let p = reserve_holdout(&ds, 0.5, seed).unwrap();
            assert_eq!(p.holdout_indices, vec![7, 8, 9]);
        }
    }

    #[test]
    fn holdout_errors() {
        let ds = grouped(&[0, 0, 0]);
        assert!(matches!(reserve_holdout(&ds, 0.5, 1), Err(Error::Infeasible(_))));
        let ds = grouped(&[0, 1]);
        assert!(matches!(reserve_holdout(&ds, 0.0, 1), Err(Error::Argument(_))));
        assert!(matches!(reserve_holdout(&ds, 1.0, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn holdout_group_disjoint_over_many_seeds() {
        let groups: Vec<usize> = (0..150).map(|i| (i * 7919) % 50).collect();
        let ds = grouped(&groups);
        for seed in 0..120 {
            let p = reserve_holdout(&ds, 0.25, seed).unwrap();
            let hold: BTreeSet<&String> =
                p.holdout_indices.iter().map(|&i| &ds.group_ids()[i]).collect();
            assert!(p
                .research_indices
                .iter()
                .all(|&i| !hold.contains(&ds.group_ids()[i])));
            assert_eq!(p.research_indices.len() + p.holdout_indices.len(), 150);
        }
    }

    #[test]
    fn thirds() {
        let rows: Vec<usize> = (0..90).collect();
        let s = split_three_way(&rows, 0, 5).unwrap();
        assert_eq!((s.train.len(), s.shadow.len(), s.test.len()), (30, 30, 30));
        let rows: Vec<usize> = (0..91).collect();
        let s = split_three_way(&rows, 0, 5).unwrap();
        assert_eq!((s.train.len(), s.shadow.len(), s.test.len()), (31, 30, 30));
        let rows: Vec<usize> = (0..92).collect();
        let s = split_three_way(&rows, 0, 5).unwrap();
        assert_eq!((s.train.len(), s.shadow.len(), s.test.len()), (31, 31, 30));
    }

    #[test]
    fn split_determinism_and_repeats() {
        let rows: Vec<usize> = (100..190).collect();
        assert_eq!(split_three_way(&rows, 2, 11).unwrap(), split_three_way(&rows, 2, 11).unwrap());
        assert_ne!(
            split_three_way(&rows, 1, 11).unwrap().train,
            split_three_way(&rows, 2, 11).unwrap().train
        );
        assert!(matches!(split_three_way(&[1, 2], 0, 0), Err(Error::Argument(_))));
        assert!(matches!(split_three_way(&rows, 5, 0), Err(Error::Argument(_))));
    }

    proptest::proptest! {
        #[test]
        fn split_is_exhaustive_partition(n in 3usize..300, repeat in 0u8..5, seed in proptest::prelude::any::<u64>()) {
            let rows: Vec<usize> = (0..n).map(|i| i * 3 + 1).collect();
            let s = split_three_way(&rows, repeat, seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.shadow).chain(&s.test).copied().collect();
            all.sort_unstable();
            proptest::prop_assert_eq!(&all, &rows);
            let sizes = [s.train.len(), s.shadow.len(), s.test.len()];
            proptest::prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
