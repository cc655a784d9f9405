//! Metrics files, aggregation and the markdown report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use super::wilcoxon::{wilcoxon_signed_rank, WilcoxonResult};
use crate::dataset::Scope;
use crate::error::{Error, Result};
use crate::model::{HeadKind, Variant};

pub const METRICS_HEADER: [&str; 6] = [
    "variant",
    "window_ms",
    "scope",
    "subject",
    "head",
    "accuracy",
];

/// One line of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub variant: Variant,
    pub window_ms: u32,
    pub scope: Scope,
    pub subject: u32,
    pub head: HeadKind,
    /// Test accuracy in percent.
    pub accuracy: f64,
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

pub fn write_metrics(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.variant.to_string(),
            r.window_ms.to_string(),
            r.scope.to_string(),
            r.subject.to_string(),
            r.head.to_string(),
            format!("{:.6}", r.accuracy),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(Error::Format(format!(
            "{}: expected header {}",
            path.display(),
            METRICS_HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad =
            |what: &str| Error::Format(format!("{}: row {}: bad {what}", path.display(), line + 2));
        rows.push(MetricRow {
            variant: rec[0].parse().map_err(|_| bad("variant"))?,
            window_ms: rec[1].parse().map_err(|_| bad("window_ms"))?,
            scope: rec[2].parse().map_err(|_| bad("scope"))?,
            subject: rec[3].parse().map_err(|_| bad("subject"))?,
            head: rec[4].parse().map_err(|_| bad("head"))?,
            accuracy: rec[5].parse().map_err(|_| bad("accuracy"))?,
        });
    }
    Ok(rows)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Head whose accuracy represents a variant in the headline tables.
pub fn primary_head(variant: Variant) -> HeadKind {
    match variant {
        Variant::TNet => HeadKind::TNet,
        Variant::FNet => HeadKind::FNet,
        _ => HeadKind::Fused,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub scope: Scope,
    pub variant: Variant,
    pub window_ms: u32,
    pub head: HeadKind,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

type CellKey = (String, Variant, u32, HeadKind);

fn group(rows: &[MetricRow]) -> BTreeMap<CellKey, (Scope, BTreeMap<u32, f64>)> {
    let mut cells: BTreeMap<CellKey, (Scope, BTreeMap<u32, f64>)> = BTreeMap::new();
    for r in rows {
        let key = (r.scope.to_string(), r.variant, r.window_ms, r.head);
        let cell = cells
            .entry(key)
            .or_insert_with(|| (r.scope, BTreeMap::new()));
        if cell.1.insert(r.subject, r.accuracy).is_some() {
            log::warn!(
                "duplicate metrics for subject {} ({} {} ms {} {}); keeping the last",
                r.subject,
                r.variant,
                r.window_ms,
                r.scope,
                r.head
            );
        }
    }
    cells
}

/// Mean ± population STD over subjects for every (scope, variant, window,
/// head) cell.
pub fn summarize(rows: &[MetricRow]) -> Vec<Summary> {
    group(rows)
        .into_iter()
        .map(|((_, variant, window_ms, head), (scope, by_subject))| {
            let values: Vec<f64> = by_subject.values().copied().collect();
            let (mean, std) = mean_std(&values);
            Summary {
                scope,
                variant,
                window_ms,
                head,
                n: values.len(),
                mean,
                std,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub scope: Scope,
    pub window_ms: u32,
    pub reference: Variant,
    pub other: Variant,
    /// Subjects present for both variants.
    pub subjects: usize,
    /// `None` when the test could not be run (too few subjects).
    pub result: Option<WilcoxonResult>,
}

/// Paired Wilcoxon tests of `reference` against each of `against` on their
/// primary heads, per scope and window, over subjects present in both.
pub fn compare(rows: &[MetricRow], reference: Variant, against: &[Variant]) -> Vec<Comparison> {
    let cells = group(rows);
    let mut out = Vec::new();
    let keys: BTreeSet<(String, u32)> = cells.keys().map(|k| (k.0.clone(), k.2)).collect();
    for (scope_name, window) in keys {
        let lookup = |v: Variant| cells.get(&(scope_name.clone(), v, window, primary_head(v)));
        let Some((scope, base)) = lookup(reference) else {
            continue;
        };
        for &other in against {
            let Some((_, cmp)) = lookup(other) else {
                continue;
            };
            let paired: Vec<(f64, f64)> = base
                .iter()
                .filter_map(|(s, a)| cmp.get(s).map(|b| (*a, *b)))
                .collect();
            let (a, b): (Vec<f64>, Vec<f64>) = paired.iter().copied().unzip();
            out.push(Comparison {
                scope: *scope,
                window_ms: window,
                reference,
                other,
                subjects: paired.len(),
                result: wilcoxon_signed_rank(&a, &b).ok(),
            });
        }
    }
    out
}

pub fn render_comparisons(comparisons: &[Comparison]) -> String {
    let mut s =
        String::from("| Scope | Window | Reference | Other | Subjects | W | p | Marker |\n");
    s.push_str("|---|---|---|---|---|---|---|---|\n");
    for c in comparisons {
        let (w, p, m) = match &c.result {
            Some(r) => (
                format!("{}", r.statistic),
                format!("{:.3e}", r.p_value),
                r.marker.to_string(),
            ),
            None => ("n/a".into(), "n/a".into(), "n/a".into()),
        };
        let _ = writeln!(
            s,
            "| {} | {} ms | {} | {} | {} | {w} | {p} | {m} |",
            c.scope, c.window_ms, c.reference, c.other, c.subjects
        );
    }
    s
}

fn cell(summaries: &[Summary], scope: &str, v: Variant, w: u32, h: HeadKind) -> String {
    summaries
        .iter()
        .find(|s| s.scope.to_string() == scope && s.variant == v && s.window_ms == w && s.head == h)
        .map_or_else(|| "-".into(), |s| format!("{:.2} ± {:.2}", s.mean, s.std))
}

/// Markdown report: headline accuracy per variant and window for each
/// scope, the per-head breakdown of hybrids, and Wilcoxon markers against
/// `reference` when given.
pub fn render_report(
    rows: &[MetricRow],
    reference: Option<Variant>,
    heatmaps: &[String],
) -> String {
    let summaries = summarize(rows);
    let scopes: BTreeSet<String> = summaries.iter().map(|s| s.scope.to_string()).collect();
    let windows: BTreeSet<u32> = summaries.iter().map(|s| s.window_ms).collect();
    let windows: Vec<u32> = windows.into_iter().rev().collect();
    let variants: BTreeSet<Variant> = summaries.iter().map(|s| s.variant).collect();
    let subjects: BTreeSet<u32> = rows.iter().map(|r| r.subject).collect();

    let mut s = String::from("# Test accuracy\n\n");
    let _ = writeln!(
        s,
        "Mean ± population STD of per-subject test accuracy (%), {} subject(s).\n",
        subjects.len()
    );
    for scope in &scopes {
        let _ = writeln!(s, "## Scope `{scope}`\n");
        s.push_str("| Variant |");
        for w in &windows {
            let _ = write!(s, " {w} ms |");
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(windows.len()));
        s.push('\n');
        for &v in &variants {
            let _ = write!(s, "| {v} |");
            for &w in &windows {
                let _ = write!(s, " {} |", cell(&summaries, scope, v, w, primary_head(v)));
            }
            s.push('\n');
        }
        s.push('\n');

        let hybrids: Vec<Variant> = variants
            .iter()
            .copied()
            .filter(|v| primary_head(*v) == HeadKind::Fused)
            .collect();
        if !hybrids.is_empty() {
            let _ = writeln!(s, "### Per-head accuracy, scope `{scope}`\n");
            s.push_str("| Variant | Window | y | y_tnet | y_fnet |\n|---|---|---|---|---|\n");
            for &v in &hybrids {
                for &w in &windows {
                    let _ = writeln!(
                        s,
                        "| {v} | {w} ms | {} | {} | {} |",
                        cell(&summaries, scope, v, w, HeadKind::Fused),
                        cell(&summaries, scope, v, w, HeadKind::TNet),
                        cell(&summaries, scope, v, w, HeadKind::FNet)
                    );
                }
            }
            s.push('\n');
        }
    }

    if let Some(reference) = reference {
        let against: Vec<Variant> = variants
            .iter()
            .copied()
            .filter(|&v| v != reference)
            .collect();
        let comparisons = compare(rows, reference, &against);
        if !comparisons.is_empty() {
            s.push_str("## Wilcoxon signed-rank tests\n\n");
            s.push_str(
                "Markers: ns p > 0.05, * p ≤ 0.05, ** p ≤ 0.01, *** p ≤ 0.001, **** p ≤ 0.0001. ",
            );
            s.push_str("n/a means fewer than 5 paired subjects with nonzero differences.\n\n");
            s.push_str(&render_comparisons(&comparisons));
            s.push('\n');
        }
    }

    if !heatmaps.is_empty() {
        s.push_str("## Positional-embedding similarity\n\n");
        for h in heatmaps {
            let _ = writeln!(s, "- `{h}`");
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(variant: Variant, subject: u32, head: HeadKind, accuracy: f64) -> MetricRow {
        MetricRow {
            variant,
            window_ms: 200,
            scope: Scope::Db2All,
            subject,
            head,
            accuracy,
        }
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[80.0, 90.0]), (85.0, 5.0));
        assert_eq!(mean_std(&[77.0]), (77.0, 0.0));
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            row(Variant::Huge, 1, HeadKind::Fused, 91.25),
            row(Variant::Huge, 1, HeadKind::TNet, 88.5),
            MetricRow {
                scope: Scope::Leading(5),
                window_ms: 100,
                ..row(Variant::FNet, 2, HeadKind::FNet, 70.0)
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.csv");
        write_metrics(&p, &rows).unwrap();
        assert_eq!(read_metrics(&p).unwrap(), rows);
        std::fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(matches!(read_metrics(&p), Err(Error::Format(_))));
    }

    #[test]
    fn comparisons_pair_by_subject() {
        let mut rows = Vec::new();
        for s in 1..=6 {
            rows.push(row(Variant::Huge, s, HeadKind::Fused, 90.0 + s as f64));
            rows.push(row(
                Variant::Base,
                s,
                HeadKind::Fused,
                80.0 + s as f64 * 0.5,
            ));
            rows.push(row(Variant::TNet, s, HeadKind::TNet, 90.0 + s as f64));
        }
        let c = compare(
            &rows,
            Variant::Huge,
            &[Variant::Base, Variant::TNet, Variant::Large],
        );
        assert_eq!(c.len(), 2);
        let base = c[0].result.unwrap();
        assert_eq!((base.n, base.statistic), (6, 0.0));
        assert_eq!(base.p_value, 2.0 / 64.0);
        assert_eq!(c[1].result.unwrap().p_value, 1.0);

        let report = render_report(&rows, Some(Variant::Huge), &["possim_tnet.pgm".into()]);
        assert!(report.contains("| huge | 93.50 ± 1.71 |"));
        assert!(report.contains("| huge | 200 ms | 93.50 ± 1.71 | - | - |"));
        assert!(report.contains("| db2 | 200 ms | huge | base | 6 | 0 | 3.125e-2 | * |"));
        assert!(report.contains("possim_tnet.pgm"));
    }
}
