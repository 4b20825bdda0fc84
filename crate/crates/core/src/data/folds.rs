use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use super::Cohort;
use crate::{Error, Result};

/// Train/validation indices of one fold (both sorted ascending).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
}

/// `k` folds stratified by event indicator.
///
/// Each stratum is shuffled and dealt round-robin; the censored stratum
/// continues from the fold where the event stratum stopped, so fold sizes
/// differ by at most one and per-fold stratum counts by at most one.
pub fn stratified_folds<R: Rng + ?Sized>(cohort: &Cohort, k: usize, rng: &mut R) -> Result<Vec<Fold>> {
    stratified_folds_by_event(&cohort.events(), k, rng)
}

pub(crate) fn stratified_folds_by_event<R: Rng + ?Sized>(
    events: &[u8],
    k: usize,
    rng: &mut R,
) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Split(format!("need at least 2 folds, got {k}")));
    }
    let mut uncensored: Vec<usize> = (0..events.len()).filter(|&i| events[i] == 1).collect();
    let mut censored: Vec<usize> = (0..events.len()).filter(|&i| events[i] != 1).collect();
    for (name, stratum) in [("event", &uncensored), ("censored", &censored)] {
        if stratum.len() < k {
            return Err(Error::Split(format!(
                "{name} stratum has {} patients, fewer than {k} folds",
                stratum.len()
            )));
        }
    }
    uncensored.shuffle(rng);
    censored.shuffle(rng);
    let mut valid: Vec<Vec<usize>> = (0..k).map(|_| Vec::new()).collect();
    let mut next = 0;
    for &i in uncensored.iter().chain(&censored) {
        valid[next].push(i);
        next = (next + 1) % k;
    }
    Ok(valid
        .into_iter()
        .map(|mut v| {
            v.sort_unstable();
            let train = (0..events.len()).filter(|i| v.binary_search(i).is_err()).collect();
            Fold { train, valid: v }
        })
        .collect())
}
