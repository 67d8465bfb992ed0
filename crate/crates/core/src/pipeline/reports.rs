//! The `reports/` bundle. Every file is a pure function of the run's stored
//! outputs, so two runs with equal inputs produce identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{failed, Pipeline, PipelineError, Stage, StageResult, StageState, StageStatus};
use crate::cultural_space::CulturalConfiguration;
use crate::iw_mapper::{load_overlay, CountryPoint, IWPoint};
use crate::moral_profiler::{
    per_value_stats, smoothed_series, write_core_set_table, write_series_csv, write_value_stats_table, CoreSetResult,
};
use crate::pattern_miner::{write_pattern_table, AggregatedPattern};
use crate::persona_forge::{
    demographic_summary, DemographicSummary, OccupationTable, GENDER_AGENDER, GENDER_GENDERQUEER, GENDER_MAN,
    GENDER_NON_BINARY, GENDER_OTHER, GENDER_WOMAN,
};
use crate::wvb_aligner::{write_group_table, write_summary_table, write_top_groups_table};

/// Every file the report stage can write; sections whose stages are not
/// complete are skipped.
pub const REPORT_FILES: [&str; 17] = [
    "summary.txt",
    "table1_patterns.csv",
    "table2_alignment_summary.csv",
    "table3_top_groups.csv",
    "table6_lexical.csv",
    "table7_gender_age.csv",
    "table8_occupations.csv",
    "table9_countries.csv",
    "table10_groups.csv",
    "table11_core_sets.csv",
    "table12_value_stats.csv",
    "series_default.csv",
    "series_core.csv",
    "iw_scatter.csv",
    "iw_patterns_legend.csv",
    "iw_map.svg",
    "demographics.json",
];

const GENDERS: [&str; 6] = [
    GENDER_WOMAN,
    GENDER_MAN,
    GENDER_NON_BINARY,
    GENDER_AGENDER,
    GENDER_GENDERQUEER,
    GENDER_OTHER,
];

const TOP_COUNTRIES: usize = 100;

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

pub fn write_lexical_table<W: Write>(out: W, s: &DemographicSummary) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["Metric", "Avg.", "Std.", "Min", "Max"])?;
    let l = &s.lexical_stats;
    for (name, st) in [("Characters", l.chars), ("Words", l.words), ("Tokens", l.tokens)] {
        w.write_record([
            name.to_string(),
            format!("{:.1}", st.mean),
            format!("{:.1}", st.std),
            format!("{:.0}", st.min),
            format!("{:.0}", st.max),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Genders in fixed order beside age bands in ascending order.
pub fn write_age_gender_table<W: Write>(out: W, s: &DemographicSummary) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["Gender", "%", "Age band", "%"])?;
    let mut bands: Vec<(&String, f64)> = s.age_band_shares.iter().map(|(k, v)| (k, *v)).collect();
    bands.sort_by_key(|(k, _)| {
        k.split('-')
            .next()
            .and_then(|x| x.parse::<u32>().ok())
            .unwrap_or(u32::MAX)
    });
    for i in 0..GENDERS.len().max(bands.len()) {
        let (g, gp) = match GENDERS.get(i) {
            Some(g) => (g.to_string(), pct(s.gender_shares.get(*g).copied().unwrap_or(0.0))),
            None => (String::new(), String::new()),
        };
        let (b, bp) = match bands.get(i) {
            Some((b, p)) => (b.to_string(), pct(*p)),
            None => (String::new(), String::new()),
        };
        w.write_record([g, gp, b, bp])?;
    }
    w.flush()?;
    Ok(())
}

/// Shares descending, ties by name.
fn ranked(shares: &BTreeMap<String, f64>) -> Vec<(&str, f64)> {
    let mut v: Vec<(&str, f64)> = shares.iter().map(|(k, x)| (k.as_str(), *x)).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    v
}

/// Two side-by-side halves of a ranked list.
fn write_halves<W: Write>(out: W, label: &str, rows: &[(&str, f64)]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([label, "%", label, "%"])?;
    let half = rows.len().div_ceil(2);
    for i in 0..half {
        let (a, ap) = (rows[i].0.to_string(), pct(rows[i].1));
        let (b, bp) = match rows.get(half + i) {
            Some((b, p)) => (b.to_string(), pct(*p)),
            None => (String::new(), String::new()),
        };
        w.write_record([a, ap, b, bp])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_occupation_table<W: Write>(out: W, s: &DemographicSummary) -> csv::Result<()> {
    write_halves(out, "Occupation", &ranked(&s.occupation_macro_shares))
}

pub fn write_countries_table<W: Write>(out: W, s: &DemographicSummary) -> csv::Result<()> {
    let rows = ranked(&s.country_shares);
    write_halves(out, "Country / region", &rows[..rows.len().min(TOP_COUNTRIES)])
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

/// Scatter of the rescaled map; each point takes the colour of the first
/// listed pattern it matches.
pub fn write_svg_scatter(
    points: &[IWPoint],
    membership: &[Option<usize>],
    legend: &[String],
    overlay: &[CountryPoint],
) -> String {
    const W: f64 = 720.0;
    const H: f64 = 560.0;
    const M: f64 = 56.0;
    let xs = points.iter().map(|p| p.z1).chain(overlay.iter().map(|c| c.z1));
    let ys = points.iter().map(|p| p.z2).chain(overlay.iter().map(|c| c.z2));
    let (x0, x1) = bounds(xs);
    let (y0, y1) = bounds(ys);
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<rect x=\"{M}\" y=\"{M}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#444\"/>",
        W - 2.0 * M,
        H - 2.0 * M
    );
    for (v, lo, hi, horizontal) in [(0.0, x0, x1, true), (0.0, y0, y1, false)] {
        if v > lo && v < hi {
            let line = if horizontal {
                format!("x1=\"{0:.2}\" y1=\"{M}\" x2=\"{0:.2}\" y2=\"{1:.2}\"", sx(v), H - M)
            } else {
                format!("x1=\"{M}\" y1=\"{0:.2}\" x2=\"{1:.2}\" y2=\"{0:.2}\"", sy(v), W - M)
            };
            let _ = writeln!(s, "<line {line} stroke=\"#bbb\" stroke-dasharray=\"4 3\"/>");
        }
    }
    for (p, m) in points.iter().zip(membership) {
        let fill = m.map_or("#c8c8c8", |i| PALETTE[i % PALETTE.len()]);
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{fill}\" fill-opacity=\"0.7\"/>",
            sx(p.z1),
            sy(p.z2)
        );
    }
    for c in overlay {
        let (cx, cy) = (sx(c.z1), sy(c.z2));
        let _ = writeln!(
            s,
            "<text x=\"{cx:.2}\" y=\"{cy:.2}\" fill=\"#222\" text-anchor=\"middle\">{}</text>",
            xml_escape(&c.country)
        );
    }
    for (i, label) in legend.iter().enumerate() {
        let y = M + 14.0 + 14.0 * i as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"8\" height=\"8\" fill=\"{}\"/><text x=\"{:.2}\" y=\"{y:.2}\">{}</text>",
            M + 8.0,
            y - 8.0,
            PALETTE[i % PALETTE.len()],
            M + 20.0,
            xml_escape(label)
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">Survival vs. self-expression values</text>",
        W / 2.0,
        H - 16.0
    );
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">Traditional vs. secular values</text>",
        H / 2.0,
        H / 2.0
    );
    for (v, lbl) in [(x0, x0), (x1, x1)] {
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{lbl:.2}</text>",
            sx(v),
            H - M + 14.0
        );
    }
    for v in [y0, y1] {
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{v:.2}</text>",
            M - 4.0,
            sy(v) + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(0.05);
    (lo - pad, hi + pad)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Bundle<'a> {
    dir: &'a Path,
    written: Vec<&'static str>,
}

impl Bundle<'_> {
    fn put(&mut self, name: &'static str, bytes: Vec<u8>) -> Result<(), PipelineError> {
        fs::write(self.dir.join(name), bytes).map_err(|e| failed(name, e))?;
        self.written.push(name);
        Ok(())
    }

    fn csv<F>(&mut self, name: &'static str, f: F) -> Result<(), PipelineError>
    where
        F: FnOnce(&mut Vec<u8>) -> csv::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| failed(name, e))?;
        self.put(name, buf)
    }
}

fn done(p: &Pipeline, s: Stage) -> bool {
    p.status(s).state == StageState::Complete
}

pub(super) fn emit_reports(p: &Pipeline) -> StageResult {
    run(p).map_err(|e| (None, e))
}

fn run(p: &Pipeline) -> Result<StageStatus, PipelineError> {
    let dir = p.reports_dir();
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| failed("clearing reports", e))?;
    }
    fs::create_dir_all(&dir).map_err(|e| failed("creating reports", e))?;
    let mut b = Bundle {
        dir: &dir,
        written: Vec::new(),
    };
    let schema = p.schema();
    let params = &p.manifest.params;

    let personas = p.personas()?;
    let demo = demographic_summary(&personas, &OccupationTable::bundled());
    b.csv("table6_lexical.csv", |w| write_lexical_table(w, &demo))?;
    b.csv("table7_gender_age.csv", |w| write_age_gender_table(w, &demo))?;
    b.csv("table8_occupations.csv", |w| write_occupation_table(w, &demo))?;
    b.csv("table9_countries.csv", |w| write_countries_table(w, &demo))?;
    let mut json = serde_json::to_vec_pretty(&demo).expect("summary serializes");
    json.push(b'\n');
    b.put("demographics.json", json)?;

    if done(p, Stage::Mine) {
        let patterns = p.patterns()?;
        b.csv("table1_patterns.csv", |w| write_pattern_table(w, &patterns))?;
        let points = p.points()?;
        let shown: Vec<&AggregatedPattern> = patterns.iter().take(params.scatter_patterns).collect();
        let configs: Vec<CulturalConfiguration> = points
            .iter()
            .map(|pt| schema.decode(pt.config_id).map_err(|e| failed("decode", e)))
            .collect::<Result<_, _>>()?;
        let flags: Vec<Vec<bool>> = configs
            .iter()
            .map(|c| shown.iter().map(|a| a.itemset.matches(schema, c)).collect())
            .collect();
        b.csv("iw_scatter.csv", |buf| {
            let mut w = csv::Writer::from_writer(buf);
            let mut header = vec!["config_id".to_string(), "z1".into(), "z2".into()];
            header.extend((1..=shown.len()).map(|i| format!("pattern_{i}")));
            w.write_record(&header)?;
            for (pt, f) in points.iter().zip(&flags) {
                let mut row = vec![
                    pt.config_id.0.to_string(),
                    format!("{:.6}", pt.z1),
                    format!("{:.6}", pt.z2),
                ];
                row.extend(f.iter().map(|&x| u8::from(x).to_string()));
                w.write_record(&row)?;
            }
            w.flush()?;
            Ok(())
        })?;
        let legend: Vec<String> = shown.iter().map(|a| a.itemset.render()).collect();
        b.csv("iw_patterns_legend.csv", |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(["pattern", "itemset", "#cells", "avg. support"])?;
            for (i, (a, l)) in shown.iter().zip(&legend).enumerate() {
                w.write_record([
                    format!("pattern_{}", i + 1),
                    l.clone(),
                    a.n_cells.to_string(),
                    format!("{:.3}", a.avg_support),
                ])?;
            }
            w.flush()?;
            Ok(())
        })?;
        let overlay = match &p.manifest.inputs.overlay {
            Some(path) => load_overlay(path).map_err(|e| failed("overlay", e))?,
            None => Vec::new(),
        };
        let membership: Vec<Option<usize>> = flags.iter().map(|f| f.iter().position(|&x| x)).collect();
        b.put(
            "iw_map.svg",
            write_svg_scatter(&points, &membership, &legend, &overlay).into_bytes(),
        )?;
    }

    if done(p, Stage::Align) {
        let report = p.alignment()?;
        b.csv("table2_alignment_summary.csv", |w| write_summary_table(w, &report))?;
        b.csv("table3_top_groups.csv", |w| {
            write_top_groups_table(w, &report, params.top_groups)
        })?;
        b.csv("table10_groups.csv", |w| write_group_table(w, &report))?;
    }

    if done(p, Stage::MoralMap) {
        let mfq = p.mfq_vectors()?;
        let mft = p.mft_vectors()?;
        let series = smoothed_series(&mfq, &mft, params.series_bin);
        b.csv("series_default.csv", |w| write_series_csv(w, &series))?;
        if done(p, Stage::SelectCore) {
            let entries = p.core_sets()?;
            let results: Vec<CoreSetResult> = entries.iter().filter_map(|e| e.result.clone()).collect();
            b.csv("table11_core_sets.csv", |w| write_core_set_table(w, &results))?;
            let configs: Vec<CulturalConfiguration> = mfq
                .iter()
                .map(|m| schema.decode(m.config_id).map_err(|e| failed("decode", e)))
                .collect::<Result<_, _>>()?;
            let mut rows = Vec::new();
            for e in entries.iter().filter(|e| !e.fallback_full_set) {
                for v in &e.subset {
                    rows.extend(
                        per_value_stats(e.foundation, v, schema, &mfq, &configs)
                            .map_err(|x| failed("value stats", x))?,
                    );
                }
            }
            b.csv("table12_value_stats.csv", |w| write_value_stats_table(w, schema, &rows))?;
            let core = p.mft_core_vectors()?;
            let series = smoothed_series(&mfq, &core, params.series_bin);
            b.csv("series_core.csv", |w| write_series_csv(w, &series))?;
        }
    }

    let mut summary = String::new();
    let _ = writeln!(summary, "run: {}", p.manifest.run_id);
    let _ = writeln!(summary, "schema: {}", p.manifest.schema_hash);
    let _ = writeln!(
        summary,
        "backend: {:?} ({})",
        p.manifest.backend.kind, p.manifest.backend.model_tag
    );
    let _ = writeln!(summary, "seed: {}", params.seed);
    let _ = writeln!(summary, "personas: {}", personas.len());
    for s in Stage::ALL.into_iter().filter(|&s| s != Stage::Report) {
        let st = p.status(s);
        let _ = writeln!(
            summary,
            "{:<12} {:<8} total={} ok={} failed={}",
            s.name(),
            format!("{:?}", st.state).to_lowercase(),
            st.total,
            st.ok,
            st.failed
        );
    }
    if done(p, Stage::Align) {
        let r = p.alignment()?;
        let _ = writeln!(
            summary,
            "alignment: 1 - mean EMD unweighted {:.3}, weighted {:.3}",
            r.unweighted.score, r.weighted.score
        );
    }
    if done(p, Stage::SelectCore) {
        for e in p.core_sets()? {
            let note = if e.fallback_full_set {
                " (fallback: all variables)"
            } else {
                ""
            };
            let _ = writeln!(summary, "core set {}: {}{}", e.foundation, e.subset.join(", "), note);
        }
    }
    b.written.push("summary.txt");
    let _ = writeln!(summary, "files: {}", b.written.len());
    fs::write(dir.join("summary.txt"), summary).map_err(|e| failed("summary.txt", e))?;
    let n = b.written.len();
    Ok(StageStatus::complete(REPORT_FILES.len(), n, 0))
}
