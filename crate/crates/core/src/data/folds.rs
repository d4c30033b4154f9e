//! Cross-validation fold construction.
//!
//! Two protocols:
//! - `drosophila-5fold`: tiles grouped by source image, groups shuffled and
//!   split into five chunks; per fold, one chunk tests, the next validates,
//!   the rest train. Grouping keeps tiles of one source image out of both
//!   sides of a split. With 320 tiles from 20 sources this gives 192/64/64.
//! - `ratio-3fold`: ids shuffled and split into three chunks; per fold, one
//!   chunk tests and the other two train (a 2:1 ratio), with a 10% carve-out
//!   of the training pool serving as validation.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldProtocol {
    Drosophila5,
    Ratio3,
}

pub const PROTOCOL_NAMES: [&str; 2] = ["drosophila-5fold", "ratio-3fold"];

impl FoldProtocol {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "drosophila-5fold" => Ok(FoldProtocol::Drosophila5),
            "ratio-3fold" => Ok(FoldProtocol::Ratio3),
            other => Err(Error::config(format!(
                "unknown fold protocol {other:?}; valid protocols: {}",
                PROTOCOL_NAMES.join(", ")
            ))),
        }
    }

    pub fn fold_count(self) -> usize {
        match self {
            FoldProtocol::Drosophila5 => 5,
            FoldProtocol::Ratio3 => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub protocol: FoldProtocol,
    pub folds: Vec<Fold>,
}

/// `ids` pairs each tile id with its source-image group id.
pub fn build_folds(ids: &[(String, String)], protocol: FoldProtocol, seed: u64) -> Result<SplitPlan> {
    match protocol {
        FoldProtocol::Drosophila5 => grouped_folds(ids, seed),
        FoldProtocol::Ratio3 => ratio_folds(ids, seed),
    }
}

fn grouped_folds(ids: &[(String, String)], seed: u64) -> Result<SplitPlan> {
    let mut by_group: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (tile, group) in ids {
        by_group.entry(group).or_default().push(tile);
    }
    let mut groups: Vec<&str> = by_group.keys().copied().collect();
    if groups.len() < 5 {
        return Err(Error::data(format!(
            "drosophila-5fold needs at least 5 source images, got {}",
            groups.len()
        )));
    }
    Rng::new(seed).stream(&[0x666f6c64]).shuffle(&mut groups);

    let chunks = split_chunks(&groups, 5);
    let folds = (0..5)
        .map(|f| {
            let expand = |chunk: &[&str]| -> Vec<String> {
                chunk
                    .iter()
                    .flat_map(|g| by_group[g].iter().map(|t| t.to_string()))
                    .collect()
            };
            let test = expand(&chunks[f]);
            let val = expand(&chunks[(f + 1) % 5]);
            let train: Vec<String> = (0..5)
                .filter(|&c| c != f && c != (f + 1) % 5)
                .flat_map(|c| expand(&chunks[c]))
                .collect();
            Fold { train, val, test }
        })
        .collect();
    Ok(SplitPlan { protocol: FoldProtocol::Drosophila5, folds })
}

fn ratio_folds(ids: &[(String, String)], seed: u64) -> Result<SplitPlan> {
    let mut tiles: Vec<&str> = ids.iter().map(|(t, _)| t.as_str()).collect();
    if tiles.len() < 3 {
        return Err(Error::data(format!("ratio-3fold needs at least 3 ids, got {}", tiles.len())));
    }
    Rng::new(seed).stream(&[0x666f6c64]).shuffle(&mut tiles);

    let chunks = split_chunks(&tiles, 3);
    let folds = (0..3)
        .map(|f| {
            let test: Vec<String> = chunks[f].iter().map(|t| t.to_string()).collect();
            let pool: Vec<String> = (0..3)
                .filter(|&c| c != f)
                .flat_map(|c| chunks[c].iter().map(|t| t.to_string()))
                .collect();
            let val_n = (pool.len() / 10).max(1);
            let val = pool[..val_n].to_vec();
            let train = pool[val_n..].to_vec();
            Fold { train, val, test }
        })
        .collect();
    Ok(SplitPlan { protocol: FoldProtocol::Ratio3, folds })
}

/// Split a slice into `n` consecutive chunks with sizes differing by at most one.
fn split_chunks<T: Copy>(xs: &[T], n: usize) -> Vec<Vec<T>> {
    let base = xs.len() / n;
    let extra = xs.len() % n;
    let mut out = Vec::with_capacity(n);
    let mut at = 0;
    for i in 0..n {
        let size = base + usize::from(i < extra);
        out.push(xs[at..at + size].to_vec());
        at += size;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn tile_ids(sources: usize, tiles_per: usize) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for s in 0..sources {
            for t in 0..tiles_per {
                out.push((format!("img{s:02}_{t:02}"), format!("img{s:02}")));
            }
        }
        out
    }

    #[test]
    fn drosophila_sizes_match_192_64_64() {
        let ids = tile_ids(20, 16);
        let plan = build_folds(&ids, FoldProtocol::Drosophila5, 7).unwrap();
        assert_eq!(plan.folds.len(), 5);
        for fold in &plan.folds {
            assert_eq!(fold.train.len(), 192);
            assert_eq!(fold.val.len(), 64);
            assert_eq!(fold.test.len(), 64);
        }
    }

    #[test]
    fn test_sets_partition_the_tiles() {
        let ids = tile_ids(20, 16);
        for protocol in [FoldProtocol::Drosophila5, FoldProtocol::Ratio3] {
            let plan = build_folds(&ids, protocol, 3).unwrap();
            let mut seen = BTreeSet::new();
            for fold in &plan.folds {
                for t in &fold.test {
                    assert!(seen.insert(t.clone()), "{t} tested twice");
                }
            }
            assert_eq!(seen.len(), ids.len());
        }
    }

    #[test]
    fn within_fold_lists_are_disjoint() {
        let ids = tile_ids(10, 4);
        let plan = build_folds(&ids, FoldProtocol::Drosophila5, 1).unwrap();
        for fold in &plan.folds {
            let train: BTreeSet<_> = fold.train.iter().collect();
            assert!(fold.val.iter().all(|t| !train.contains(t)));
            assert!(fold.test.iter().all(|t| !train.contains(t)));
            let val: BTreeSet<_> = fold.val.iter().collect();
            assert!(fold.test.iter().all(|t| !val.contains(t)));
        }
    }

    #[test]
    fn grouping_keeps_source_tiles_together() {
        let ids = tile_ids(20, 16);
        let plan = build_folds(&ids, FoldProtocol::Drosophila5, 9).unwrap();
        for fold in &plan.folds {
            let test_sources: BTreeSet<&str> =
                fold.test.iter().map(|t| &t[..5]).collect();
            for t in fold.train.iter().chain(&fold.val) {
                assert!(!test_sources.contains(&t[..5]), "source leak: {t}");
            }
        }
    }

    #[test]
    fn ratio_thirds_for_1032_images() {
        let ids: Vec<(String, String)> =
            (0..1032).map(|i| (format!("im{i:04}"), format!("im{i:04}"))).collect();
        let plan = build_folds(&ids, FoldProtocol::Ratio3, 5).unwrap();
        for fold in &plan.folds {
            assert_eq!(fold.test.len(), 344);
            assert_eq!(fold.train.len() + fold.val.len(), 688);
            let val_expect = 688 / 10;
            assert_eq!(fold.val.len(), val_expect);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let ids = tile_ids(15, 4);
        let a = build_folds(&ids, FoldProtocol::Drosophila5, 11).unwrap();
        let b = build_folds(&ids, FoldProtocol::Drosophila5, 11).unwrap();
        let c = build_folds(&ids, FoldProtocol::Drosophila5, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn too_few_ids_rejected() {
        let ids = tile_ids(3, 2);
        assert!(build_folds(&ids, FoldProtocol::Drosophila5, 0).is_err());
        assert!(build_folds(&ids[..2], FoldProtocol::Ratio3, 0).is_err());
    }
}
