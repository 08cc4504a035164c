//! Report emission: `results.csv`, `results.json`, and per-(task, d) SVG
//! charts with grouped bars and seed-std error bars.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::datagen::TaskType;
use crate::metrics::Method;

use super::{CellAggregate, HarnessError, ResultsTable};

const METHOD_COLORS: [(Method, &str); 3] = [
    (Method::Erm, "#4878cf"),
    (Method::ErmPca, "#ee854a"),
    (Method::ErmIca, "#6acc64"),
];

/// Writes all report files and returns their paths.
pub fn emit_report(table: &ResultsTable, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let csv_path = out_dir.join("results.csv");
    write_results_csv(table, &csv_path)?;
    written.push(csv_path);

    let json_path = out_dir.join("results.json");
    write_results_json(table, &json_path)?;
    written.push(json_path);

    written.extend(write_charts(table, out_dir)?);
    Ok(written)
}

/// One row per (method, d, k, seed) with fixed formatting so reruns of the
/// same table are byte-identical.
pub fn write_results_csv(table: &ResultsTable, path: &Path) -> Result<(), HarnessError> {
    let mut out = String::new();
    out.push_str("method,task_type,d,k,seed,label_score,mcc,ica_converged,wall_time_s\n");
    for row in &table.rows {
        let converged = match row.ica_converged {
            Some(true) => "true",
            Some(false) => "false",
            None => "",
        };
        writeln!(
            out,
            "{},{},{},{},{},{:.6},{:.6},{},{:.3}",
            row.method,
            row.task_type,
            row.d,
            row.k,
            row.seed,
            row.label_score,
            row.mcc,
            converged,
            row.wall_time_s
        )
        .expect("string write");
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Serialize)]
struct JsonReport<'a> {
    rows: &'a [crate::metrics::EvalResult],
    aggregates: Vec<CellAggregate>,
}

pub fn write_results_json(table: &ResultsTable, path: &Path) -> Result<(), HarnessError> {
    let report = JsonReport {
        rows: &table.rows,
        aggregates: table.aggregates(),
    };
    fs::write(path, serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

/// One SVG per (task_type, d) present in the table: left panel label score
/// vs k, right panel MCC vs k, three bars per k with ±std error bars.
pub fn write_charts(table: &ResultsTable, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let aggregates = table.aggregates();
    let mut keys: Vec<(TaskType, usize)> = Vec::new();
    for agg in &aggregates {
        if !keys.contains(&(agg.task_type, agg.d)) {
            keys.push((agg.task_type, agg.d));
        }
    }
    let mut written = Vec::new();
    for (task_type, d) in keys {
        let subset: Vec<&CellAggregate> = aggregates
            .iter()
            .filter(|a| a.task_type == task_type && a.d == d)
            .collect();
        let path = out_dir.join(format!("chart_{task_type}_d{d}.svg"));
        fs::write(&path, render_chart(task_type, d, &subset))?;
        written.push(path);
    }
    Ok(written)
}

struct Panel {
    title: String,
    y_label: String,
    /// metric selector: (mean, std) per aggregate
    values: Vec<(Method, usize, f64, f64)>, // (method, k, mean, std)
}

fn render_chart(task_type: TaskType, d: usize, aggregates: &[&CellAggregate]) -> String {
    let label_name = match task_type {
        TaskType::Regression => "average R²",
        TaskType::Classification => "average accuracy",
    };
    let left = Panel {
        title: format!("{task_type}, d={d}: label prediction"),
        y_label: label_name.to_string(),
        values: aggregates
            .iter()
            .map(|a| (a.method, a.k, a.label_mean, a.label_std))
            .collect(),
    };
    let right = Panel {
        title: format!("{task_type}, d={d}: latent recovery"),
        y_label: "MCC".to_string(),
        values: aggregates
            .iter()
            .map(|a| (a.method, a.k, a.mcc_mean, a.mcc_std))
            .collect(),
    };

    const PANEL_W: f64 = 460.0;
    const PANEL_H: f64 = 340.0;
    let total_w = PANEL_W * 2.0 + 40.0;
    let total_h = PANEL_H + 20.0;
    let mut svg = String::new();
    write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{total_h}" viewBox="0 0 {total_w} {total_h}" font-family="Helvetica, Arial, sans-serif">"#
    )
    .unwrap();
    svg.push('\n');
    svg.push_str(&render_panel(&left, 10.0, 10.0, PANEL_W, PANEL_H, "label"));
    svg.push_str(&render_panel(
        &right,
        PANEL_W + 30.0,
        10.0,
        PANEL_W,
        PANEL_H,
        "mcc",
    ));
    svg.push_str("</svg>\n");
    svg
}

fn render_panel(panel: &Panel, x0: f64, y0: f64, w: f64, h: f64, metric: &str) -> String {
    let margin_left = 62.0;
    let margin_bottom = 58.0;
    let margin_top = 34.0;
    let margin_right = 12.0;
    let plot_w = w - margin_left - margin_right;
    let plot_h = h - margin_top - margin_bottom;
    let plot_x = x0 + margin_left;
    let plot_y = y0 + margin_top;

    let mut ks: Vec<usize> = panel.values.iter().map(|v| v.1).collect();
    ks.sort_unstable();
    ks.dedup();
    let methods: Vec<Method> = Method::ALL
        .into_iter()
        .filter(|m| panel.values.iter().any(|v| v.0 == *m))
        .collect();

    // Y scale: always show [0, 1]; extend if error bars go beyond it.
    let mut y_max = 1.0f64;
    let mut y_min = 0.0f64;
    for &(_, _, mean, std) in &panel.values {
        y_max = y_max.max(mean + std);
        y_min = y_min.min(mean - std);
    }
    y_max *= 1.02;
    let to_y = |v: f64| plot_y + plot_h * (1.0 - (v - y_min) / (y_max - y_min));

    let mut s = String::new();
    write!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="14" text-anchor="middle" font-weight="bold">{}</text>"#,
        x0 + w / 2.0,
        y0 + 18.0,
        panel.title
    )
    .unwrap();
    s.push('\n');

    // Gridlines and y ticks every 0.2.
    let mut tick = (y_min / 0.2).floor() * 0.2;
    while tick <= y_max {
        let y = to_y(tick);
        write!(
            s,
            r##"<line x1="{plot_x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd" stroke-width="1"/><text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{:.1}</text>"##,
            plot_x + plot_w,
            plot_x - 6.0,
            y + 4.0,
            tick
        )
        .unwrap();
        s.push('\n');
        tick += 0.2;
    }

    // Axes.
    write!(
        s,
        r##"<line x1="{plot_x:.1}" y1="{plot_y:.1}" x2="{plot_x:.1}" y2="{:.1}" stroke="#333"/><line x1="{plot_x:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#333"/>"##,
        plot_y + plot_h,
        to_y(0.0),
        plot_x + plot_w,
        to_y(0.0)
    )
    .unwrap();
    s.push('\n');
    // Axis labels.
    write!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">tasks (k)</text><text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
        plot_x + plot_w / 2.0,
        y0 + h - 26.0,
        x0 + 16.0,
        plot_y + plot_h / 2.0,
        x0 + 16.0,
        plot_y + plot_h / 2.0,
        panel.y_label
    )
    .unwrap();
    s.push('\n');

    // Grouped bars.
    let group_w = plot_w / ks.len().max(1) as f64;
    let bar_w = group_w * 0.72 / methods.len().max(1) as f64;
    for (gi, &k) in ks.iter().enumerate() {
        let group_x = plot_x + gi as f64 * group_w;
        write!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{k}</text>"#,
            group_x + group_w / 2.0,
            plot_y + plot_h + 18.0
        )
        .unwrap();
        s.push('\n');
        for (mi, &method) in methods.iter().enumerate() {
            let Some(&(_, _, mean, std)) = panel.values.iter().find(|v| v.0 == method && v.1 == k)
            else {
                continue;
            };
            let color = METHOD_COLORS
                .iter()
                .find(|(m, _)| *m == method)
                .map(|(_, c)| *c)
                .unwrap_or("#999999");
            let x = group_x + group_w * 0.14 + mi as f64 * bar_w;
            let y_top = to_y(mean.max(0.0));
            let y_base = to_y(0.0);
            let height = (y_base - y_top).max(0.0);
            write!(
                s,
                r#"<rect x="{x:.1}" y="{y_top:.1}" width="{:.1}" height="{height:.1}" fill="{color}" data-metric="{metric}" data-method="{method}" data-k="{k}" data-mean="{mean:.6}" data-std="{std:.6}"/>"#,
                bar_w * 0.92
            )
            .unwrap();
            s.push('\n');
            // Error bar with caps.
            let cx = x + bar_w * 0.46;
            let y_hi = to_y(mean + std);
            let y_lo = to_y((mean - std).max(y_min));
            write!(
                s,
                r##"<line x1="{cx:.1}" y1="{y_hi:.1}" x2="{cx:.1}" y2="{y_lo:.1}" stroke="#333" stroke-width="1.2"/><line x1="{:.1}" y1="{y_hi:.1}" x2="{:.1}" y2="{y_hi:.1}" stroke="#333" stroke-width="1.2"/><line x1="{:.1}" y1="{y_lo:.1}" x2="{:.1}" y2="{y_lo:.1}" stroke="#333" stroke-width="1.2"/>"##,
                cx - 3.5,
                cx + 3.5,
                cx - 3.5,
                cx + 3.5
            )
            .unwrap();
            s.push('\n');
            // Numeric label above the error bar.
            write!(
                s,
                r#"<text x="{cx:.1}" y="{:.1}" font-size="9" text-anchor="middle">{mean:.3}</text>"#,
                y_hi - 3.0
            )
            .unwrap();
            s.push('\n');
        }
    }

    // Legend along the bottom.
    let mut lx = plot_x;
    let ly = y0 + h - 8.0;
    for &method in &methods {
        let color = METHOD_COLORS
            .iter()
            .find(|(m, _)| *m == method)
            .map(|(_, c)| *c)
            .unwrap_or("#999999");
        write!(
            s,
            r#"<rect x="{lx:.1}" y="{:.1}" width="10" height="10" fill="{color}"/><text x="{:.1}" y="{:.1}" font-size="11">{method}</text>"#,
            ly - 9.0,
            lx + 14.0,
            ly
        )
        .unwrap();
        s.push('\n');
        lx += 90.0;
    }
    s
}
