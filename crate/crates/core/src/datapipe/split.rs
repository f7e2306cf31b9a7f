use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Manifest};

/// Splits into `(train, test)`, both keeping the input's record order.
///
/// Group-aware splitting shuffles groups and moves whole groups to the test
/// side until it holds at least `test_fraction` of the samples; at least one
/// group always stays on the training side. Otherwise `round(fraction·n)`
/// individually shuffled samples go to test.
pub fn split_dataset(
    manifest: &Manifest,
    test_fraction: f64,
    seed: u64,
    group_aware: bool,
) -> Result<(Manifest, Manifest), DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::BadFraction(test_fraction));
    }
    let n = manifest.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; n];

    if group_aware {
        let mut order: Vec<&str> = Vec::new();
        let mut members: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, r) in manifest.records.iter().enumerate() {
            let key = r.group_key();
            members
                .entry(key)
                .or_insert_with(|| {
                    order.push(key);
                    Vec::new()
                })
                .push(i);
        }
        if order.len() < 2 {
            return Err(DataError::TooFewGroups(order.len()));
        }
        order.shuffle(&mut rng);
        let target = test_fraction * n as f64;
        let mut taken = 0usize;
        for g in &order[..order.len() - 1] {
            if taken as f64 >= target {
                break;
            }
            for &i in &members[g] {
                is_test[i] = true;
            }
            taken += members[g].len();
        }
    } else {
        if n < 2 {
            return Err(DataError::Invalid(format!("cannot split {n} samples")));
        }
        let k = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let chosen: HashSet<usize> = idx[..k].iter().copied().collect();
        for i in chosen {
            is_test[i] = true;
        }
    }

    let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| is_test[i]);
    Ok((manifest.subset(&train), manifest.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::SampleRecord;

    fn grouped(groups: usize, per: usize) -> Manifest {
        let records = (0..groups)
            .flat_map(|g| (0..per).map(move |k| SampleRecord::new(format!("g{g}/{k}.png"), k as f64).with_group(format!("g{g}"))))
            .collect();
        Manifest::new(records, "").unwrap()
    }

    #[test]
    fn whole_groups_reach_the_fraction() {
        let m = grouped(10, 15);
        for seed in 0..20 {
            let (train, test) = split_dataset(&m, 0.2, seed, true).unwrap();
            assert_eq!(test.len(), 30);
            assert_eq!(train.len(), 120);
            let test_groups: HashSet<_> = test.records.iter().map(|r| r.group_key()).collect();
            assert_eq!(test_groups.len(), 2);
            assert!(train.records.iter().all(|r| !test_groups.contains(r.group_key())));
        }
    }

    #[test]
    fn ungrouped_split_uses_rounded_count() {
        let records = (0..100).map(|i| SampleRecord::new(format!("{i}.png"), i as f64)).collect();
        let m = Manifest::new(records, "").unwrap();
        let (train, test) = split_dataset(&m, 0.2, 3, false).unwrap();
        assert_eq!((train.len(), test.len()), (80, 20));
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = grouped(1, 5);
        assert!(matches!(split_dataset(&m, 0.2, 0, true), Err(DataError::TooFewGroups(1))));
        for f in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(split_dataset(&grouped(3, 2), f, 0, true), Err(DataError::BadFraction(_))));
        }
    }

    #[test]
    fn seeds_change_the_split() {
        let m = grouped(10, 3);
        let sets: HashSet<Vec<String>> = (0..10)
            .map(|s| split_dataset(&m, 0.2, s, true).unwrap().1.records.into_iter().map(|r| r.media_path).collect())
            .collect();
        assert!(sets.len() > 1);
    }
}
