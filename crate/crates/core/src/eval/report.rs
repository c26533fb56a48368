use std::fmt::Write;

use super::{DimensionScore, EvalReport};

#[derive(Debug, Clone)]
pub struct TableRow {
    pub model: String,
    pub mode: String,
    pub report: EvalReport,
}

fn cell(v: f64) -> String {
    format!("{v:.2}")
}

fn signed(v: f64) -> String {
    format!("{v:+.2}")
}

fn pp(a: Option<&DimensionScore>, b: Option<&DimensionScore>, f: fn(&DimensionScore) -> f64) -> String {
    match (a, b) {
        (Some(a), Some(b)) => format!("{} pp", signed(f(b) - f(a))),
        _ => "-".into(),
    }
}

fn scores(d: Option<&DimensionScore>) -> [String; 3] {
    match d {
        Some(d) => [cell(d.precision), cell(d.recall), cell(d.f1)],
        None => ["-".into(), "-".into(), "-".into()],
    }
}

fn line(out: &mut String, cols: &[String]) {
    let widths = [14, 14, 10, 10, 10, 22];
    for (c, w) in cols.iter().zip(widths) {
        let _ = write!(out, "{c:<w$}");
    }
    out.truncate(out.trim_end().len());
    out.push('\n');
}

/// Consecutive rows of one model form a group; a group of two or more rows
/// gets an improvement line comparing its last row to its first.
fn groups(rows: &[TableRow]) -> Vec<&[TableRow]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=rows.len() {
        if i == rows.len() || rows[i].model != rows[start].model {
            out.push(&rows[start..i]);
            start = i;
        }
    }
    out
}

/// Plain-text score table: a temporal block and a spatial block with the
/// same row layout, then secondary dimensions and auxiliary metrics.
pub fn render_table(rows: &[TableRow]) -> String {
    let mut out = String::new();
    let header = |a: &str, b: &str, c: &str, d: &str| -> Vec<String> {
        ["Model", "Mode", a, b, c, d].iter().map(|s| s.to_string()).collect()
    };

    line(&mut out, &header("T-P", "T-R", "T-F1", "Comb-F1"));
    for group in groups(rows) {
        for (i, r) in group.iter().enumerate() {
            let model = if i == 0 { r.model.clone() } else { String::new() };
            let [p, rc, f] = scores(r.report.temporal());
            line(&mut out, &[model, r.mode.clone(), p, rc, f, cell(r.report.combined_f1)]);
        }
        if let (true, Some(a), Some(b)) = (group.len() > 1, group.first(), group.last()) {
            let (ta, tb) = (a.report.temporal(), b.report.temporal());
            let delta = b.report.combined_f1 - a.report.combined_f1;
            let rel = if a.report.combined_f1 > 0.0 {
                format!(" ({:+.2}%)", 100.0 * delta / a.report.combined_f1)
            } else {
                String::new()
            };
            line(
                &mut out,
                &[
                    String::new(),
                    "Improvement".into(),
                    pp(ta, tb, |d| d.precision),
                    pp(ta, tb, |d| d.recall),
                    pp(ta, tb, |d| d.f1),
                    format!("{} pp{rel}", signed(delta)),
                ],
            );
        }
    }
    out.push('\n');

    line(&mut out, &header("S-P", "S-R", "S-F1", "MDE (km)"));
    for group in groups(rows) {
        for (i, r) in group.iter().enumerate() {
            let model = if i == 0 { r.model.clone() } else { String::new() };
            let [p, rc, f] = scores(r.report.spatial());
            let mde = r.report.mde_km.map_or("-".into(), cell);
            line(&mut out, &[model, r.mode.clone(), p, rc, f, mde]);
        }
        if let (true, Some(a), Some(b)) = (group.len() > 1, group.first(), group.last()) {
            let (sa, sb) = (a.report.spatial(), b.report.spatial());
            let mde = match (a.report.mde_km, b.report.mde_km) {
                (Some(x), Some(y)) if x > 0.0 => format!("{:+.2} km ({:+.1}% lower)", y - x, 100.0 * (x - y) / x),
                (Some(x), Some(y)) => format!("{:+.2} km", y - x),
                _ => "-".into(),
            };
            line(
                &mut out,
                &[
                    String::new(),
                    "Improvement".into(),
                    pp(sa, sb, |d| d.precision),
                    pp(sa, sb, |d| d.recall),
                    pp(sa, sb, |d| d.f1),
                    mde,
                ],
            );
        }
    }

    let mut extra = String::new();
    for r in rows {
        for d in &r.report.dimensions {
            if d.dimension == r.report.temporal_dimension || d.dimension == r.report.spatial_dimension {
                continue;
            }
            let [p, rc, f] = scores(Some(d));
            line(
                &mut extra,
                &[r.model.clone(), r.mode.clone(), p, rc, f, d.dimension.clone()],
            );
        }
    }
    if !extra.is_empty() {
        out.push('\n');
        line(&mut out, &header("P", "R", "F1", "Dimension"));
        out.push_str(&extra);
    }

    out.push('\n');
    let opt = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.2}%"));
    for r in rows {
        let _ = writeln!(
            out,
            "{} / {}: chunks {}, normalization accuracy {}, geocoding success {}, MDE pairs {} ({} unmeasured)",
            r.model,
            r.mode,
            r.report.chunks,
            opt(r.report.normalization_accuracy),
            opt(r.report.geocoding_success_rate),
            r.report.mde_pairs,
            r.report.mde_unmeasured
        );
    }
    if groups(rows).iter().any(|g| g.len() > 1) {
        out.push_str("pp: percentage points; relative changes in parentheses.\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Counts;

    fn score(dimension: &str, p: f64, r: f64, f1: f64) -> DimensionScore {
        DimensionScore {
            dimension: dimension.into(),
            counts: Counts::default(),
            precision: p,
            recall: r,
            f1,
        }
    }

    fn report(t: [f64; 3], s: [f64; 3], comb: f64, mde: f64) -> EvalReport {
        EvalReport {
            chunks: 500,
            temporal_dimension: "temporal".into(),
            spatial_dimension: "spatial".into(),
            dimensions: vec![score("temporal", t[0], t[1], t[2]), score("spatial", s[0], s[1], s[2])],
            combined_f1: comb,
            normalization_accuracy: None,
            geocoding_success_rate: None,
            mde_km: Some(mde),
            mde_pairs: 1,
            mde_unmeasured: 0,
        }
    }

    #[test]
    fn improvement_rows_show_points_and_percent() {
        let rows = vec![
            TableRow {
                model: "GPT-4o-mini".into(),
                mode: "Baseline".into(),
                report: report([67.83, 65.44, 66.61], [87.11, 65.59, 74.83], 70.72, 377.32),
            },
            TableRow {
                model: "GPT-4o-mini".into(),
                mode: "STIndex".into(),
                report: report([71.05, 68.32, 69.66], [92.00, 67.65, 77.97], 73.81, 369.02),
            },
        ];
        let text = render_table(&rows);
        assert!(text.contains("+3.22 pp"), "{text}");
        assert!(text.contains("+3.09 pp (+4.37%)"), "{text}");
        assert!(text.contains("+4.89 pp"), "{text}");
        assert!(text.contains("-8.30 km (+2.2% lower)"), "{text}");
        assert_eq!(text.matches("Improvement").count(), 2);
    }
}
