use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::data::{AgeGroup, Gender, Meta, SkinTone};
use crate::error::{Error, Result};
use crate::seed;

type Cell = (Option<SkinTone>, Option<Gender>, Option<AgeGroup>);

fn cell_key(c: &Cell) -> u64 {
    let idx = |v: Option<usize>| v.map_or(0, |i| i as u64 + 1);
    idx(c.0.map(|t| t as usize)) * 100 + idx(c.1.map(|g| g as usize)) * 10 + idx(c.2.map(|a| a as usize))
}

/// Number of items of a cell of size `n` assigned to the first part.
pub fn cell_quota(n: usize, frac: f64) -> usize {
    ((frac * n as f64 + 0.5 + 1e-9).floor() as usize).min(n)
}

/// Partition indices into `(first, second)` per (skin tone, gender, age)
/// cell, with `round(frac * n)` of each cell in `first`. Both lists are in
/// ascending index order.
pub fn split_indices(metas: &[Meta], frac: f64, root_seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if metas.is_empty() {
        return Err(Error::Empty("split input"));
    }
    if !(0.0..=1.0).contains(&frac) {
        return Err(Error::Config(format!("split fraction {frac} outside [0, 1]")));
    }
    let mut cells: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, m) in metas.iter().enumerate() {
        cells
            .entry(cell_key(&(m.skin_tone, m.gender, m.age_group)))
            .or_default()
            .push(i);
    }
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for (key, mut members) in cells {
        let mut rng = seed::rng(seed::derive(root_seed, "split", &[key]));
        members.shuffle(&mut rng);
        let k = cell_quota(members.len(), frac);
        first.extend_from_slice(&members[..k]);
        second.extend_from_slice(&members[k..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    Ok((first, second))
}

/// Stratified split of owned items by their metadata.
pub fn split_stratified<S: Clone>(
    items: &[S],
    meta: impl Fn(&S) -> Meta,
    frac: f64,
    root_seed: u64,
) -> Result<(Vec<S>, Vec<S>)> {
    let metas: Vec<Meta> = items.iter().map(meta).collect();
    let (a, b) = split_indices(&metas, frac, root_seed)?;
    Ok((
        a.into_iter().map(|i| items[i].clone()).collect(),
        b.into_iter().map(|i| items[i].clone()).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Region;
    use proptest::prelude::*;

    fn meta(t: usize, g: usize, a: usize) -> Meta {
        Meta::complete(Region::Trunk, SkinTone::ALL[t], Gender::ALL[g], AgeGroup::ALL[a])
    }

    #[test]
    fn ten_in_one_cell() {
        let m = vec![meta(0, 0, 0); 10];
        let (a, b) = split_indices(&m, 0.7, 1).unwrap();
        assert_eq!((a.len(), b.len()), (7, 3));
        assert_eq!(cell_quota(5, 0.7), 4);
        assert_eq!(cell_quota(1, 0.7), 1);
        assert_eq!(cell_quota(3, 0.5), 2);
    }

    #[test]
    fn empty_rejected() {
        assert!(split_indices(&[], 0.7, 0).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let m: Vec<Meta> = (0..60).map(|i| meta(i % 2, i / 2 % 2, i % 3)).collect();
        assert_eq!(split_indices(&m, 0.7, 4).unwrap(), split_indices(&m, 0.7, 4).unwrap());
        assert_ne!(split_indices(&m, 0.7, 4).unwrap(), split_indices(&m, 0.7, 5).unwrap());
    }

    proptest! {
        #[test]
        fn is_partition(cells in prop::collection::vec((0usize..2, 0usize..2, 0usize..3), 1..120), s in any::<u64>()) {
            let m: Vec<Meta> = cells.iter().map(|&(t, g, a)| meta(t, g, a)).collect();
            let (a, b) = split_indices(&m, 0.7, s).unwrap();
            let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..m.len()).collect::<Vec<_>>());
            for cell in &cells {
                let n = cells.iter().filter(|c| *c == cell).count();
                let k = a.iter().filter(|&&i| cells[i] == *cell).count();
                prop_assert!((k as f64 - 0.7 * n as f64).abs() <= 1.0);
            }
        }
    }
}
