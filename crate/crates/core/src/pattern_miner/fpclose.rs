//! Closed frequent itemset mining over an FP-tree, with item merging and a
//! subsumption check against the closed sets found so far.

use std::collections::{BTreeMap, HashMap};

/// Smallest count that is frequent at `min_support` over `n` transactions.
pub(crate) fn min_count(n: usize, min_support: f64) -> u64 {
    let mut c = (min_support * n as f64).ceil().max(1.0) as u64;
    while c > 1 && is_frequent(c - 1, n, min_support) {
        c -= 1;
    }
    while !is_frequent(c, n, min_support) {
        c += 1;
    }
    c
}

pub(crate) fn is_frequent(count: u64, n: usize, min_support: f64) -> bool {
    count as f64 >= min_support * n as f64 - 1e-9
}

struct Node {
    rank: usize,
    count: u64,
    parent: usize,
    children: Vec<usize>,
}

struct FpTree {
    /// rank -> item, by descending support then ascending item
    items: Vec<u32>,
    supports: Vec<u64>,
    nodes: Vec<Node>,
    links: Vec<Vec<usize>>,
}

impl FpTree {
    fn build(db: &[(Vec<u32>, u64)], min_count: u64) -> Self {
        let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
        for (t, w) in db {
            for &i in t {
                *counts.entry(i).or_insert(0) += w;
            }
        }
        let mut ranked: Vec<(u32, u64)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let rank_of: HashMap<u32, usize> = ranked.iter().enumerate().map(|(r, &(i, _))| (i, r)).collect();
        let mut tree = FpTree {
            items: ranked.iter().map(|r| r.0).collect(),
            supports: ranked.iter().map(|r| r.1).collect(),
            nodes: vec![Node {
                rank: usize::MAX,
                count: 0,
                parent: usize::MAX,
                children: Vec::new(),
            }],
            links: vec![Vec::new(); ranked.len()],
        };
        for (t, w) in db {
            let mut path: Vec<usize> = t.iter().filter_map(|i| rank_of.get(i).copied()).collect();
            path.sort_unstable();
            tree.insert(&path, *w);
        }
        tree
    }

    fn insert(&mut self, path: &[usize], weight: u64) {
        let mut at = 0;
        for &rank in path {
            let found = self.nodes[at]
                .children
                .iter()
                .copied()
                .find(|&c| self.nodes[c].rank == rank);
            at = match found {
                Some(c) => c,
                None => {
                    let id = self.nodes.len();
                    self.nodes.push(Node {
                        rank,
                        count: 0,
                        parent: at,
                        children: Vec::new(),
                    });
                    self.nodes[at].children.push(id);
                    self.links[rank].push(id);
                    id
                }
            };
            self.nodes[at].count += weight;
        }
    }

    /// Weighted root paths above every node holding `rank`.
    fn prefix_paths(&self, rank: usize) -> Vec<(Vec<u32>, u64)> {
        self.links[rank]
            .iter()
            .map(|&n| {
                let mut items = Vec::new();
                let mut at = self.nodes[n].parent;
                while at != 0 {
                    items.push(self.items[self.nodes[at].rank]);
                    at = self.nodes[at].parent;
                }
                (items, self.nodes[n].count)
            })
            .filter(|(items, _)| !items.is_empty())
            .collect()
    }
}

#[derive(Default)]
struct ClosedStore {
    by_support: HashMap<u64, Vec<Vec<u32>>>,
}

impl ClosedStore {
    fn subsumed(&self, set: &[u32], support: u64) -> bool {
        self.by_support
            .get(&support)
            .is_some_and(|v| v.iter().any(|c| is_subset(set, c)))
    }

    fn insert(&mut self, set: Vec<u32>, support: u64) {
        self.by_support.entry(support).or_default().push(set);
    }
}

/// Both slices sorted ascending.
fn is_subset(small: &[u32], big: &[u32]) -> bool {
    let mut it = big.iter();
    small.iter().all(|s| it.any(|b| b == s))
}

fn mine(tree: &FpTree, prefix: &[u32], min_count: u64, store: &mut ClosedStore) {
    for rank in (0..tree.items.len()).rev() {
        let support = tree.supports[rank];
        let base = tree.prefix_paths(rank);
        let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
        for (path, w) in &base {
            for &i in path {
                *counts.entry(i).or_insert(0) += w;
            }
        }
        let merged: Vec<u32> = counts.iter().filter(|&(_, &c)| c == support).map(|(&i, _)| i).collect();
        let mut set: Vec<u32> = prefix.to_vec();
        set.push(tree.items[rank]);
        set.extend(&merged);
        set.sort_unstable();
        if store.subsumed(&set, support) {
            continue;
        }
        store.insert(set.clone(), support);
        let rest: Vec<(Vec<u32>, u64)> = base
            .into_iter()
            .map(|(path, w)| (path.into_iter().filter(|i| !merged.contains(i)).collect::<Vec<_>>(), w))
            .filter(|(p, _)| !p.is_empty())
            .collect();
        if rest.is_empty() {
            continue;
        }
        let cond = FpTree::build(&rest, min_count);
        if !cond.items.is_empty() {
            mine(&cond, &set, min_count, store);
        }
    }
}

/// Closed frequent itemsets (excluding the empty set) with their counts,
/// sorted by itemset. Items within each transaction must be distinct.
pub fn closed_itemsets(transactions: &[Vec<u32>], min_support: f64) -> Vec<(Vec<u32>, u64)> {
    if transactions.is_empty() {
        return Vec::new();
    }
    let mc = min_count(transactions.len(), min_support);
    let db: Vec<(Vec<u32>, u64)> = transactions.iter().map(|t| (t.clone(), 1)).collect();
    let tree = FpTree::build(&db, mc);
    let mut store = ClosedStore::default();
    mine(&tree, &[], mc, &mut store);
    let mut out: Vec<(Vec<u32>, u64)> = store
        .by_support
        .into_iter()
        .flat_map(|(s, sets)| sets.into_iter().map(move |set| (set, s)))
        .collect();
    out.sort();
    out
}
