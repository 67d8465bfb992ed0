use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{CoreSetResult, Foundation, MoralError, MoralVector};
use crate::cultural_space::{ConfigId, CulturalConfiguration, CulturalSchema};

pub const CORE_SET_HEADER: [&str; 4] = [
    "Moral Foundation",
    "mean Jaccard",
    "k distribution (#runs)",
    "Selected variables (support)",
];

pub const VALUE_STATS_HEADER: [&str; 8] = [
    "Moral Foundation",
    "Core variable",
    "Core value",
    "Mean",
    "Median",
    "Q25",
    "Q75",
    "p(≥ 4)",
];

/// Questionnaire score summary for personas holding one level. The
/// statistics are `None` when no persona holds the level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueStats {
    pub foundation: Foundation,
    pub variable: String,
    pub level: String,
    pub n: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub q25: Option<f64>,
    pub q75: Option<f64>,
    pub p_ge_4: Option<f64>,
}

/// Linear-interpolation quantile (type 7) of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// One row per level of `variable`, in level order.
pub fn per_value_stats(
    foundation: Foundation,
    variable: &str,
    schema: &CulturalSchema,
    mfq: &[MoralVector],
    configs: &[CulturalConfiguration],
) -> Result<Vec<ValueStats>, MoralError> {
    let vi = schema
        .variable_index(variable)
        .ok_or_else(|| MoralError::UnknownVariable(variable.to_string()))?;
    let by_id: HashMap<ConfigId, &CulturalConfiguration> = configs.iter().map(|c| (c.id(), c)).collect();
    let levels = &schema.variables()[vi].levels;
    let mut strata: Vec<Vec<f64>> = vec![Vec::new(); levels.len()];
    for m in mfq {
        match by_id.get(&m.config_id) {
            Some(c) => strata[c.level_of(vi)].push(m.get(foundation)),
            None => log::warn!("no configuration for persona {}; skipped", m.config_id),
        }
    }
    Ok(levels
        .iter()
        .zip(strata)
        .map(|(level, mut xs)| {
            xs.sort_by(f64::total_cmp);
            let n = xs.len();
            let some = |v: f64| (n > 0).then_some(v);
            let (mean, median, q25, q75, p) = if n == 0 {
                (0.0, 0.0, 0.0, 0.0, 0.0)
            } else {
                (
                    xs.iter().sum::<f64>() / n as f64,
                    quantile(&xs, 0.5),
                    quantile(&xs, 0.25),
                    quantile(&xs, 0.75),
                    xs.iter().filter(|&&x| x >= 4.0 - 1e-9).count() as f64 / n as f64,
                )
            };
            ValueStats {
                foundation,
                variable: variable.to_string(),
                level: level.id.clone(),
                n,
                mean: some(mean),
                median: some(median),
                q25: some(q25),
                q75: some(q75),
                p_ge_4: some(p),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub foundation: Foundation,
    pub bin: usize,
    /// Position of the bin's first persona in the ordering.
    pub start: usize,
    pub n: usize,
    pub mfq_mean: f64,
    pub mft_mean: f64,
}

/// Bin means of both score types over personas ordered by configuration id
/// (variable by variable, then by level). Personas without an inferred
/// vector are skipped; the last bin may be short.
pub fn smoothed_series(mfq: &[MoralVector], mft: &[MoralVector], bin: usize) -> Vec<SeriesPoint> {
    assert!(bin > 0, "bin size must be positive");
    let inferred: HashMap<ConfigId, &MoralVector> = mft.iter().map(|v| (v.config_id, v)).collect();
    let mut paired: Vec<(&MoralVector, &MoralVector)> = mfq
        .iter()
        .filter_map(|m| inferred.get(&m.config_id).map(|t| (m, *t)))
        .collect();
    paired.sort_by_key(|(m, _)| m.config_id);
    let mut out = Vec::new();
    for f in Foundation::ALL {
        for (b, chunk) in paired.chunks(bin).enumerate() {
            let n = chunk.len() as f64;
            out.push(SeriesPoint {
                foundation: f,
                bin: b,
                start: b * bin,
                n: chunk.len(),
                mfq_mean: chunk.iter().map(|(m, _)| m.get(f)).sum::<f64>() / n,
                mft_mean: chunk.iter().map(|(_, t)| t.get(f)).sum::<f64>() / n,
            });
        }
    }
    out
}

pub fn write_series_csv<W: Write>(w: W, points: &[SeriesPoint]) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["foundation", "bin", "start", "n", "mfq_mean", "mft_mean"])?;
    for p in points {
        wr.write_record([
            p.foundation.name().to_string(),
            p.bin.to_string(),
            p.start.to_string(),
            p.n.to_string(),
            format!("{:.4}", p.mfq_mean),
            format!("{:.4}", p.mft_mean),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_core_set_table<W: Write>(w: W, results: &[CoreSetResult]) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(CORE_SET_HEADER)?;
    for r in results {
        let k: Vec<String> = r.k_distribution.iter().map(|(k, c)| format!("k={k} ({c})")).collect();
        let s: Vec<String> = r.support.iter().map(|(v, s)| format!("{v} ({s:.2})")).collect();
        wr.write_record([
            r.foundation.title().to_string(),
            format!("{:.3}", r.mean_jaccard),
            k.join(", "),
            s.join(", "),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Levels and variables are written with their schema labels; empty strata
/// leave the statistic cells blank.
pub fn write_value_stats_table<W: Write>(w: W, schema: &CulturalSchema, rows: &[ValueStats]) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(VALUE_STATS_HEADER)?;
    let fmt = |x: Option<f64>| x.map(|v| format!("{v:.3}")).unwrap_or_default();
    for r in rows {
        let var = schema.variable(&r.variable);
        let var_label = var.map_or(r.variable.clone(), |v| v.label.clone());
        let level_label = var
            .and_then(|v| v.levels.iter().find(|l| l.id == r.level))
            .map_or(r.level.clone(), |l| l.label.clone());
        wr.write_record([
            r.foundation.title().to_string(),
            var_label,
            level_label,
            fmt(r.mean),
            fmt(r.median),
            fmt(r.q25),
            fmt(r.q75),
            fmt(r.p_ge_4),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
