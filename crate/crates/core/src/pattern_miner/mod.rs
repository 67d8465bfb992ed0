//! Grid partitioning of the map plane, per-cell closed itemset mining over
//! conditioning configurations, and cross-cell aggregation.

mod brute;
mod fpclose;

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cultural_space::{ConfigId, CulturalConfiguration, CulturalSchema, SchemaError};
use crate::iw_mapper::IWPoint;

pub use brute::{brute_force_closed, ORACLE_MAX_ITEMS, ORACLE_MAX_TRANSACTIONS};
pub use fpclose::closed_itemsets;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MineError {
    #[error("empty transaction dataset")]
    EmptyDataset,
    #[error("min_support must be in (0, 1], got {0}")]
    InvalidSupport(f64),
    #[error("oracle limited to {ORACLE_MAX_ITEMS} items and {ORACLE_MAX_TRANSACTIONS} transactions, got {items} and {transactions}")]
    TooLarge { items: usize, transactions: usize },
    #[error("{0}")]
    Schema(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("cell side must be positive and finite, got {0}")]
    InvalidSide(f64),
    #[error("non-finite coordinates for config {}", .0 .0)]
    NonFinite(ConfigId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinerParams {
    pub min_support: f64,
    pub rho: f64,
    pub cell_side: f64,
    pub min_cells: usize,
    /// Whether singletons count toward a cell's maximum support in the
    /// rho filter.
    pub singletons_in_max: bool,
}

impl Default for MinerParams {
    fn default() -> Self {
        Self {
            min_support: 0.2,
            rho: 0.5,
            cell_side: 1.0,
            min_cells: 2,
            singletons_in_max: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Item {
    pub variable: String,
    pub level: String,
}

/// Canonically sorted by (variable, level); one item per variable.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Itemset {
    pub items: Vec<Item>,
}

impl Itemset {
    pub fn new(mut items: Vec<Item>) -> Option<Self> {
        items.sort();
        items.dedup();
        let distinct_vars = items.windows(2).all(|w| w[0].variable != w[1].variable);
        distinct_vars.then_some(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Display form, e.g. `happiness = very happy; social trust = most people trusted`.
    pub fn render(&self) -> String {
        self.items
            .iter()
            .map(|i| format!("{} = {}", i.variable.replace('_', " "), i.level.replace('_', " ")))
            .collect::<Vec<_>>()
            .join("; ")
    }

    pub fn matches(&self, schema: &CulturalSchema, config: &CulturalConfiguration) -> bool {
        self.items.iter().all(|item| {
            schema
                .variable_index(&item.variable)
                .is_some_and(|v| schema.variables()[v].levels[config.level_indices()[v]].id == item.level)
        })
    }
}

/// Flat item ids: variable offset plus level index.
struct ItemCodec<'s> {
    schema: &'s CulturalSchema,
    offsets: Vec<u32>,
}

impl<'s> ItemCodec<'s> {
    fn new(schema: &'s CulturalSchema) -> Self {
        let mut offsets = Vec::with_capacity(schema.len());
        let mut acc = 0u32;
        for v in schema.variables() {
            offsets.push(acc);
            acc += v.levels.len() as u32;
        }
        Self { schema, offsets }
    }

    fn transaction(&self, config: &CulturalConfiguration) -> Vec<u32> {
        config
            .level_indices()
            .iter()
            .enumerate()
            .map(|(v, &l)| self.offsets[v] + l as u32)
            .collect()
    }

    fn itemset(&self, ids: &[u32]) -> Itemset {
        let items = ids
            .iter()
            .map(|&id| {
                let v = self.offsets.partition_point(|&o| o <= id) - 1;
                let var = &self.schema.variables()[v];
                Item {
                    variable: var.name.clone(),
                    level: var.levels[(id - self.offsets[v]) as usize].id.clone(),
                }
            })
            .collect();
        Itemset::new(items).expect("one item per variable by construction")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub ix: i64,
    pub iy: i64,
    pub side: f64,
    pub member_config_ids: Vec<ConfigId>,
}

/// Half-open cells `[ix*side, (ix+1)*side) x [iy*side, (iy+1)*side)`,
/// returned sorted by `(ix, iy)`; empty cells are absent.
pub fn grid_assign(points: &[IWPoint], side: f64) -> Result<Vec<GridCell>, GridError> {
    if !(side.is_finite() && side > 0.0) {
        return Err(GridError::InvalidSide(side));
    }
    let mut cells: BTreeMap<(i64, i64), Vec<ConfigId>> = BTreeMap::new();
    for p in points {
        if !(p.z1.is_finite() && p.z2.is_finite()) {
            return Err(GridError::NonFinite(p.config_id));
        }
        let key = ((p.z1 / side).floor() as i64, (p.z2 / side).floor() as i64);
        cells.entry(key).or_default().push(p.config_id);
    }
    Ok(cells
        .into_iter()
        .map(|((ix, iy), mut ids)| {
            ids.sort();
            GridCell {
                ix,
                iy,
                side,
                member_config_ids: ids,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPattern {
    pub ix: i64,
    pub iy: i64,
    pub itemset: Itemset,
    pub support: f64,
    pub count: u64,
}

/// Per-cell detail record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMining {
    pub ix: i64,
    pub iy: i64,
    pub members: usize,
    pub patterns: Vec<CellPattern>,
}

pub fn mine_closed_itemsets(transactions: &[Vec<u32>], min_support: f64) -> Result<Vec<(Vec<u32>, u64)>, MineError> {
    if !(min_support > 0.0 && min_support <= 1.0) {
        return Err(MineError::InvalidSupport(min_support));
    }
    if transactions.is_empty() {
        return Err(MineError::EmptyDataset);
    }
    Ok(closed_itemsets(transactions, min_support))
}

/// Mines every cell in parallel; output follows cell order.
pub fn mine_cells(schema: &CulturalSchema, cells: &[GridCell], min_support: f64) -> Result<Vec<CellMining>, MineError> {
    let codec = ItemCodec::new(schema);
    cells
        .par_iter()
        .map(|cell| {
            let transactions = cell
                .member_config_ids
                .iter()
                .map(|&id| Ok(codec.transaction(&schema.decode(id)?)))
                .collect::<Result<Vec<_>, SchemaError>>()
                .map_err(|e| MineError::Schema(e.to_string()))?;
            let n = transactions.len() as f64;
            let mut patterns: Vec<CellPattern> = mine_closed_itemsets(&transactions, min_support)?
                .into_iter()
                .map(|(ids, count)| CellPattern {
                    ix: cell.ix,
                    iy: cell.iy,
                    itemset: codec.itemset(&ids),
                    support: count as f64 / n,
                    count,
                })
                .collect();
            patterns.sort_by(|a, b| a.itemset.cmp(&b.itemset));
            Ok(CellMining {
                ix: cell.ix,
                iy: cell.iy,
                members: transactions.len(),
                patterns,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedPattern {
    pub itemset: Itemset,
    pub n_cells: usize,
    pub avg_support: f64,
    pub support_range: [f64; 2],
    pub avg_per_cell_personas: f64,
}

/// Keeps each cell's itemsets with support at least `rho` times the cell's
/// maximum, then aggregates across cells covering at least `min_cells`.
pub fn filter_and_aggregate(
    cells: &[CellMining],
    rho: f64,
    min_cells: usize,
    singletons_in_max: bool,
) -> Vec<AggregatedPattern> {
    // (cell key, support, members) per itemset
    type Hit = ((i64, i64), f64, usize);
    let mut groups: BTreeMap<&Itemset, Vec<Hit>> = BTreeMap::new();
    for cell in cells {
        let s_max = cell
            .patterns
            .iter()
            .filter(|p| singletons_in_max || p.itemset.len() > 1)
            .map(|p| p.support)
            .fold(0.0, f64::max);
        let threshold = rho * s_max;
        for p in &cell.patterns {
            if p.support >= threshold - 1e-12 {
                groups
                    .entry(&p.itemset)
                    .or_default()
                    .push(((cell.ix, cell.iy), p.support, cell.members));
            }
        }
    }
    let mut out: Vec<AggregatedPattern> = groups
        .into_iter()
        .filter(|(_, v)| v.len() >= min_cells.max(1))
        .map(|(itemset, mut v)| {
            // sum in cell order so results do not depend on input order
            v.sort_by_key(|a| a.0);
            let n = v.len() as f64;
            AggregatedPattern {
                itemset: itemset.clone(),
                n_cells: v.len(),
                avg_support: v.iter().map(|x| x.1).sum::<f64>() / n,
                support_range: [
                    v.iter().map(|x| x.1).fold(f64::INFINITY, f64::min),
                    v.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max),
                ],
                avg_per_cell_personas: v.iter().map(|x| x.2 as f64).sum::<f64>() / n,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.n_cells
            .cmp(&a.n_cells)
            .then(b.avg_support.total_cmp(&a.avg_support))
            .then_with(|| a.itemset.cmp(&b.itemset))
    });
    out
}

pub const TABLE1_HEADER: [&str; 5] = [
    "Closed frequent cultural-configuration itemset",
    "#cells",
    "avg. support",
    "support range",
    "avg. per-cell #pers.",
];

pub fn write_pattern_table<W: Write>(out: W, patterns: &[AggregatedPattern]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TABLE1_HEADER)?;
    for p in patterns {
        w.write_record([
            p.itemset.render(),
            p.n_cells.to_string(),
            format!("{:.3}", p.avg_support),
            format!("[{:.2}, {:.2}]", p.support_range[0], p.support_range[1]),
            format!("{:.0}", p.avg_per_cell_personas),
        ])?;
    }
    w.flush()?;
    Ok(())
}
