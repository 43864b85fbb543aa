use rand::seq::SliceRandom;

use super::{Dataset, DatasetError};
use crate::rng;

/// A seeded train/test partition of one dataset.
#[derive(Debug, Clone)]
pub struct SplitPair {
    pub train: Dataset,
    pub test: Dataset,
    pub seed: u64,
    pub ratio: f64,
    /// Classes too small to stratify (fewer than two samples), kept wholly in train.
    pub warnings: Vec<String>,
}

/// Stratified split: each class contributes `floor(ratio * N_c)` or
/// `ceil(ratio * N_c)` samples to train, with the rounding distributed by
/// largest remainder so the train total is `round(ratio * N)`.
///
/// Both halves keep the parent's record order.
pub fn split(ds: &Dataset, ratio: f64, seed: u64) -> Result<SplitPair, DatasetError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::InvalidSplit(format!("ratio {ratio} outside (0, 1)")));
    }
    if ds.len() < 2 {
        return Err(DatasetError::InvalidSplit(format!(
            "need at least 2 samples, have {}",
            ds.len()
        )));
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes()];
    for (i, s) in ds.samples.iter().enumerate() {
        by_class[s.label].push(i);
    }

    let mut rng = rng::seeded(seed, rng::stream::SPLIT);
    let mut warnings = Vec::new();
    let mut in_train = vec![false; ds.len()];

    let mut eligible = Vec::new();
    for (class, members) in by_class.iter_mut().enumerate() {
        match members.len() {
            0 => {}
            1 => {
                let msg = format!(
                    "class {} ({}) has fewer than 2 samples; placed wholly in train",
                    class, ds.class_names[class]
                );
                log::warn!("{msg}");
                warnings.push(msg);
                in_train[members[0]] = true;
            }
            _ => {
                members.shuffle(&mut rng);
                eligible.push(class);
            }
        }
    }

    let eligible_total: usize = eligible.iter().map(|&c| by_class[c].len()).sum();
    let mut quota: Vec<(usize, usize, f64)> = eligible
        .iter()
        .map(|&c| {
            let exact = ratio * by_class[c].len() as f64;
            let base = exact.floor();
            (c, base as usize, exact - base)
        })
        .collect();
    let target = (ratio * eligible_total as f64).round() as usize;
    let assigned: usize = quota.iter().map(|q| q.1).sum();
    let mut extra = target.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..quota.len()).collect();
    order.sort_by(|&a, &b| quota[b].2.total_cmp(&quota[a].2).then(quota[a].0.cmp(&quota[b].0)));
    for i in order {
        if extra == 0 {
            break;
        }
        if quota[i].2 > 0.0 {
            quota[i].1 += 1;
            extra -= 1;
        }
    }

    for (class, n_train, _) in quota {
        for &i in &by_class[class][..n_train] {
            in_train[i] = true;
        }
    }

    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (s, t) in ds.samples.iter().zip(&in_train) {
        if *t {
            train.push(s.clone());
        } else {
            test.push(s.clone());
        }
    }

    Ok(SplitPair {
        train: ds.with_samples(train),
        test: ds.with_samples(test),
        seed,
        ratio,
        warnings,
    })
}
