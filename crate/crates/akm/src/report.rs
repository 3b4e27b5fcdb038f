//! Report emitters: the mean ± std table (text and CSV) and SVG charts.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::{CellStat, TrialStats};
use crate::metrics::METRIC_NAMES;

/// Rendered table in both output formats.
#[derive(Debug, Clone)]
pub struct TableRender {
    pub text: String,
    pub csv: String,
}

/// `0.xxx ± 0.yyy` with exactly three decimals.
pub fn format_cell(cell: CellStat) -> String {
    format!("{:.3} ± {:.3}", cell.mean, cell.std)
}

/// Parse a cell back to (mean, std).
pub fn parse_cell(cell: &str) -> Option<(f64, f64)> {
    let (mean, std) = cell.split_once(" ± ")?;
    Some((mean.trim().parse().ok()?, std.trim().parse().ok()?))
}

fn csv_field(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Split one CSV line written by [`render_table`].
pub fn parse_csv_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut field = String::new();
    let mut in_quotes = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if in_quotes && chars.peek() == Some(&'"') => {
                field.push('"');
                chars.next();
            }
            '"' => in_quotes = !in_quotes,
            ',' if !in_quotes => fields.push(std::mem::take(&mut field)),
            other => field.push(other),
        }
    }
    fields.push(field);
    fields
}

/// Render the 14 metric rows plus the Average row, models in roster order
/// with the aggregated column last.
pub fn render_table(stats: &TrialStats) -> TableRender {
    let mut rows: Vec<(String, Vec<String>)> = Vec::with_capacity(METRIC_NAMES.len() + 1);
    for (m, name) in METRIC_NAMES.iter().enumerate() {
        let cells = stats.cells[m].iter().map(|c| format_cell(*c)).collect();
        rows.push((name.to_string(), cells));
    }
    rows.push((
        "Average".to_string(),
        stats.average.iter().map(|c| format_cell(*c)).collect(),
    ));

    // Plain-text table.
    let name_width = rows
        .iter()
        .map(|(n, _)| n.len())
        .chain(std::iter::once("Metric".len()))
        .max()
        .unwrap();
    let col_widths: Vec<usize> = stats
        .model_ids
        .iter()
        .enumerate()
        .map(|(j, id)| {
            rows.iter()
                .map(|(_, cells)| cells[j].len())
                .chain(std::iter::once(id.len()))
                .max()
                .unwrap()
        })
        .collect();
    let mut text = String::new();
    text.push_str(&format!("{:<name_width$}", "Metric"));
    for (j, id) in stats.model_ids.iter().enumerate() {
        text.push_str(&format!("  {:>width$}", id, width = col_widths[j]));
    }
    text.push('\n');
    let total = name_width + col_widths.iter().map(|w| w + 2).sum::<usize>();
    text.push_str(&"-".repeat(total));
    text.push('\n');
    for (name, cells) in &rows {
        text.push_str(&format!("{name:<name_width$}"));
        for (j, cell) in cells.iter().enumerate() {
            text.push_str(&format!("  {:>width$}", cell, width = col_widths[j]));
        }
        text.push('\n');
    }

    // CSV: header row of model ids, first column metric names.
    let mut csv = String::new();
    csv.push_str("Metric");
    for id in &stats.model_ids {
        csv.push(',');
        csv.push_str(&csv_field(id));
    }
    csv.push('\n');
    for (name, cells) in &rows {
        csv.push_str(&csv_field(name));
        for cell in cells {
            csv.push(',');
            csv.push_str(&csv_field(cell));
        }
        csv.push('\n');
    }

    TableRender { text, csv }
}

const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
    "#9c755f", "#bab0ac",
];

fn sanitize_file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect()
}

/// Write all chart files into `dir`: one grouped bar chart over every metric
/// with std error bars, plus one per-model grid of trial-mean histograms.
/// Returns the written paths.
pub fn render_charts(stats: &TrialStats, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let bars = dir.join("metrics_bars.svg");
    std::fs::write(&bars, grouped_bar_chart(stats)).map_err(|e| Error::io(&bars, e))?;
    written.push(bars);

    for (j, model_id) in stats.model_ids.iter().enumerate() {
        let path = dir.join(format!("dist_{}.svg", sanitize_file_stem(model_id)));
        std::fs::write(&path, histogram_grid(stats, j)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Grouped bar chart: one group per metric, one bar per model, error bars at
/// mean ± std.
fn grouped_bar_chart(stats: &TrialStats) -> String {
    let n_models = stats.model_ids.len();
    let bar_w = 14.0;
    let group_gap = 22.0;
    let group_w = n_models as f64 * bar_w + group_gap;
    let margin_left = 56.0;
    let margin_top = 46.0;
    let plot_h = 320.0;
    let label_h = 96.0;
    let width = margin_left + METRIC_NAMES.len() as f64 * group_w + 24.0;
    let height = margin_top + plot_h + label_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{margin_left}\" y=\"20\" font-size=\"14\">Mean metric per model ({} trials, {} questions; error bars = std)</text>\n",
        stats.trials, stats.n_questions
    ));

    // Legend.
    let mut lx = margin_left;
    for (j, id) in stats.model_ids.iter().enumerate() {
        let color = PALETTE[j % PALETTE.len()];
        svg.push_str(&format!(
            "<rect x=\"{lx:.1}\" y=\"28\" width=\"10\" height=\"10\" fill=\"{color}\"/>\
             <text x=\"{:.1}\" y=\"37\" font-size=\"11\">{}</text>\n",
            lx + 13.0,
            xml_escape(id)
        ));
        lx += 13.0 + 7.0 * id.len() as f64 + 18.0;
    }

    let y_of = |v: f64| margin_top + plot_h * (1.0 - v);
    // Gridlines every 0.2.
    for i in 0..=5 {
        let v = i as f64 * 0.2;
        let y = y_of(v);
        svg.push_str(&format!(
            "<line x1=\"{margin_left}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>\
             <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"end\">{v:.1}</text>\n",
            width - 12.0,
            margin_left - 6.0,
            y + 3.5
        ));
    }

    for (m, name) in METRIC_NAMES.iter().enumerate() {
        let group_x = margin_left + m as f64 * group_w + group_gap / 2.0;
        for (j, cell) in stats.cells[m].iter().enumerate() {
            let x = group_x + j as f64 * bar_w;
            let y = y_of(cell.mean);
            let color = PALETTE[j % PALETTE.len()];
            svg.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{color}\"/>\n",
                bar_w - 2.0,
                y_of(0.0) - y
            ));
            // Error bar, clamped to the axis range.
            let lo = y_of((cell.mean - cell.std).max(0.0));
            let hi = y_of((cell.mean + cell.std).min(1.0));
            let cx = x + (bar_w - 2.0) / 2.0;
            svg.push_str(&format!(
                "<line x1=\"{cx:.1}\" y1=\"{hi:.1}\" x2=\"{cx:.1}\" y2=\"{lo:.1}\" stroke=\"#333\"/>\
                 <line x1=\"{:.1}\" y1=\"{hi:.1}\" x2=\"{:.1}\" y2=\"{hi:.1}\" stroke=\"#333\"/>\
                 <line x1=\"{:.1}\" y1=\"{lo:.1}\" x2=\"{:.1}\" y2=\"{lo:.1}\" stroke=\"#333\"/>\n",
                cx - 3.0,
                cx + 3.0,
                cx - 3.0,
                cx + 3.0
            ));
        }
        let label_x = group_x + (n_models as f64 * bar_w) / 2.0;
        let label_y = margin_top + plot_h + 12.0;
        svg.push_str(&format!(
            "<text x=\"{label_x:.1}\" y=\"{label_y:.1}\" font-size=\"10\" text-anchor=\"end\" \
             transform=\"rotate(-45 {label_x:.1} {label_y:.1})\">{}</text>\n",
            xml_escape(name)
        ));
    }
    svg.push_str(&format!(
        "<line x1=\"{margin_left}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#333\"/>\n",
        y_of(0.0),
        width - 12.0,
        y_of(0.0)
    ));
    svg.push_str("</svg>\n");
    svg
}

/// 7 × 2 grid of per-metric histograms of the trial means for one model,
/// with a red mean marker.
fn histogram_grid(stats: &TrialStats, model: usize) -> String {
    let cols = 7usize;
    let rows = METRIC_NAMES.len().div_ceil(cols);
    let cell_w = 170.0;
    let cell_h = 140.0;
    let pad = 16.0;
    let width = cols as f64 * cell_w + pad * 2.0;
    let height = rows as f64 * cell_h + pad * 2.0 + 24.0;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{pad}\" y=\"18\" font-size=\"14\">{} — distribution of per-trial means ({} trials)</text>\n",
        xml_escape(&stats.model_ids[model]),
        stats.trials
    ));

    for (m, name) in METRIC_NAMES.iter().enumerate() {
        let values = &stats.trial_means[model][m];
        let cx0 = pad + (m % cols) as f64 * cell_w;
        let cy0 = pad + 24.0 + (m / cols) as f64 * cell_h;
        let plot_w = cell_w - 34.0;
        let plot_h = cell_h - 46.0;
        let px0 = cx0 + 24.0;
        let py0 = cy0 + 18.0;

        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"middle\">{}</text>\n",
            px0 + plot_w / 2.0,
            cy0 + 10.0,
            xml_escape(name)
        ));
        svg.push_str(&format!(
            "<rect x=\"{px0:.1}\" y=\"{py0:.1}\" width=\"{plot_w:.1}\" height=\"{plot_h:.1}\" \
             fill=\"none\" stroke=\"#ccc\"/>\n"
        ));

        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if max > min { max - min } else { 1.0 };
        let lo = if max > min { min } else { min - 0.5 };
        let bins = 10usize;
        let mut counts = vec![0usize; bins];
        for v in values {
            let i = (((v - lo) / span) * bins as f64) as usize;
            counts[i.min(bins - 1)] += 1;
        }
        let peak = counts.iter().copied().max().unwrap_or(1).max(1) as f64;
        for (i, count) in counts.iter().enumerate() {
            if *count == 0 {
                continue;
            }
            let bw = plot_w / bins as f64;
            let bh = plot_h * (*count as f64 / peak);
            svg.push_str(&format!(
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{bh:.1}\" fill=\"{}\"/>\n",
                px0 + i as f64 * bw,
                py0 + plot_h - bh,
                bw - 1.0,
                PALETTE[model % PALETTE.len()]
            ));
        }
        // Red mean marker.
        let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
        let mx = px0 + plot_w * ((mean - lo) / span).clamp(0.0, 1.0);
        svg.push_str(&format!(
            "<line x1=\"{mx:.1}\" y1=\"{py0:.1}\" x2=\"{mx:.1}\" y2=\"{:.1}\" stroke=\"red\" stroke-width=\"1.5\"/>\n",
            py0 + plot_h
        ));
        svg.push_str(&format!(
            "<text x=\"{px0:.1}\" y=\"{:.1}\" font-size=\"8\">{lo:.3}</text>\
             <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"8\" text-anchor=\"end\">{:.3}</text>\n",
            py0 + plot_h + 10.0,
            px0 + plot_w,
            py0 + plot_h + 10.0,
            lo + span
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_stats(model_ids: &[&str], fill: CellStat) -> TrialStats {
        let n = model_ids.len();
        TrialStats {
            model_ids: model_ids.iter().map(|s| s.to_string()).collect(),
            trials: 3,
            n_questions: 2,
            cells: vec![vec![fill; n]; METRIC_NAMES.len()],
            average: vec![fill; n],
            trial_means: vec![vec![vec![fill.mean; 3]; METRIC_NAMES.len()]; n],
        }
    }

    #[test]
    fn cell_formatting_anchor() {
        assert_eq!(
            format_cell(CellStat { mean: 0.2917, std: 0.0481 }),
            "0.292 ± 0.048"
        );
        assert_eq!(format_cell(CellStat { mean: 1.0, std: 0.0 }), "1.000 ± 0.000");
        assert_eq!(parse_cell("0.292 ± 0.048"), Some((0.292, 0.048)));
        assert_eq!(parse_cell("nonsense"), None);
    }

    #[test]
    fn table_has_fifteen_rows_and_roster_columns() {
        let stats = synthetic_stats(&["m0", "m1", "AKM"], CellStat { mean: 0.5, std: 0.1 });
        let table = render_table(&stats);

        let csv_lines: Vec<&str> = table.csv.lines().collect();
        assert_eq!(csv_lines.len(), 1 + 14 + 1);
        assert_eq!(csv_lines[0], "Metric,m0,m1,AKM");
        assert_eq!(csv_lines[1].split(',').next().unwrap(), "BLEU-1");
        assert!(csv_lines[15].starts_with("Average,"));

        let text_lines: Vec<&str> = table.text.lines().collect();
        assert_eq!(text_lines.len(), 2 + 14 + 1);
        assert!(text_lines[0].contains("AKM"));
        for line in &text_lines[2..] {
            assert!(line.contains("0.500 ± 0.100"), "{line}");
        }
    }

    #[test]
    fn csv_cells_round_trip_at_three_decimals() {
        let stats = synthetic_stats(&["alpha", "AKM"], CellStat { mean: 0.123456, std: 0.654321 });
        let table = render_table(&stats);
        for line in table.csv.lines().skip(1) {
            let fields = parse_csv_line(line);
            assert_eq!(fields.len(), 3);
            for cell in &fields[1..] {
                let (mean, std) = parse_cell(cell).unwrap();
                assert!((mean - 0.123).abs() < 5e-4);
                assert!((std - 0.654).abs() < 5e-4);
            }
        }
    }

    #[test]
    fn csv_quotes_fields_with_commas() {
        let stats = synthetic_stats(&["model,with,commas"], CellStat { mean: 0.0, std: 0.0 });
        let table = render_table(&stats);
        let header = table.csv.lines().next().unwrap();
        assert_eq!(header, "Metric,\"model,with,commas\"");
        let fields = parse_csv_line(header);
        assert_eq!(fields[1], "model,with,commas");
    }

    #[test]
    fn charts_are_written_and_well_formed() {
        let dir = tempfile::tempdir().unwrap();
        let stats = synthetic_stats(&["m0", "m1", "m2"], CellStat { mean: 0.4, std: 0.05 });
        let written = render_charts(&stats, dir.path()).unwrap();
        assert_eq!(written.len(), 1 + 3);

        let bars = std::fs::read_to_string(dir.path().join("metrics_bars.svg")).unwrap();
        assert!(bars.starts_with("<svg"));
        assert!(bars.ends_with("</svg>\n"));
        // 14 groups × 3 models bars plus 3 legend swatches.
        assert_eq!(bars.matches("<rect").count(), 14 * 3 + 3);

        let hist = std::fs::read_to_string(dir.path().join("dist_m0.svg")).unwrap();
        assert!(hist.contains("stroke=\"red\""));
    }

    #[test]
    fn constant_metric_has_zero_height_error_bar() {
        let stats = synthetic_stats(&["m0"], CellStat { mean: 0.5, std: 0.0 });
        let svg = grouped_bar_chart(&stats);
        // With std 0 the error-bar endpoints coincide: y1 == y2 on the stem.
        let stem = svg
            .lines()
            .find(|l| l.contains("stroke=\"#333\"") && l.contains("x1") && l.contains("<line"))
            .unwrap();
        let y1 = stem.split("y1=\"").nth(1).unwrap().split('"').next().unwrap();
        let y2 = stem.split("y2=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(y1, y2);
    }
}
