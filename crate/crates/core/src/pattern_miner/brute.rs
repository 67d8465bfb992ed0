use std::collections::BTreeSet;

use super::fpclose::is_frequent;
use super::MineError;

pub const ORACLE_MAX_ITEMS: usize = 20;
pub const ORACLE_MAX_TRANSACTIONS: usize = 200;

/// Exhaustive closed frequent itemsets, for checking the tree miner.
pub fn brute_force_closed(transactions: &[Vec<u32>], min_support: f64) -> Result<Vec<(Vec<u32>, u64)>, MineError> {
    if transactions.is_empty() {
        return Err(MineError::EmptyDataset);
    }
    let items: Vec<u32> = transactions
        .iter()
        .flatten()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if items.len() > ORACLE_MAX_ITEMS || transactions.len() > ORACLE_MAX_TRANSACTIONS {
        return Err(MineError::TooLarge {
            items: items.len(),
            transactions: transactions.len(),
        });
    }
    let masks: Vec<u32> = transactions
        .iter()
        .map(|t| {
            t.iter()
                .map(|i| 1u32 << items.binary_search(i).unwrap())
                .fold(0, |a, b| a | b)
        })
        .collect();
    let support = |set: u32| masks.iter().filter(|&&m| m & set == set).count() as u64;
    let n = transactions.len();
    let mut out = Vec::new();
    for set in 1u32..(1u32 << items.len()) {
        let s = support(set);
        if !is_frequent(s, n, min_support) {
            continue;
        }
        let closed = (0..items.len())
            .filter(|b| set & (1 << b) == 0)
            .all(|b| support(set | (1 << b)) < s);
        if closed {
            let members = (0..items.len())
                .filter(|b| set & (1 << b) != 0)
                .map(|b| items[b])
                .collect();
            out.push((members, s));
        }
    }
    out.sort();
    Ok(out)
}
