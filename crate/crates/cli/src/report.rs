//! Ablation tables and training curves over finished runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fspc_core::train::{EpochRecord, RunDir, RunReport, TrainConfig};

use crate::{output_dir, require_path, CliError, GlobalArgs, ReportArgs};

/// Table rows follow this order; unknown settings sort last.
pub const SETTING_ORDER: [&str; 4] = ["base", "+SCI", "+CIF", "+CIA"];

pub fn setting_label(cfg: &TrainConfig) -> &'static str {
    match (cfg.with_cia, cfg.cia.sci, cfg.cia.cif) {
        (false, _, _) | (true, false, false) => "base",
        (true, true, false) => "+SCI",
        (true, false, true) => "+CIF",
        (true, true, true) => "+CIA",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub run: String,
    pub setting: String,
    pub backbone: String,
    pub task: String,
    /// Percentages, as printed.
    pub mean_pct: f64,
    pub ci95_pct: f64,
    pub episodes: usize,
}

fn row_for(dir: &Path, report: &RunReport) -> Result<Row, CliError> {
    let cfg: TrainConfig = serde_json::from_value(report.config.clone()).map_err(|e| {
        CliError::Data(format!(
            "{}: config snapshot unreadable: {e}",
            dir.display()
        ))
    })?;
    Ok(Row {
        run: dir.file_name().map_or_else(
            || dir.display().to_string(),
            |n| n.to_string_lossy().into_owned(),
        ),
        setting: setting_label(&cfg).to_string(),
        backbone: serde_json::to_value(cfg.backbone.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
        task: format!("{}w{}s{}q", cfg.way, cfg.shot, cfg.query),
        mean_pct: 100.0 * report.mean_accuracy,
        ci95_pct: 100.0 * report.ci95_halfwidth,
        episodes: report.per_episode_accuracies.len(),
    })
}

/// Stable sort into ablation order.
pub fn order_rows(rows: &mut [Row]) {
    let rank = |s: &str| {
        SETTING_ORDER
            .iter()
            .position(|x| *x == s)
            .unwrap_or(SETTING_ORDER.len())
    };
    rows.sort_by_key(|r| rank(&r.setting));
}

const HEADER: [&str; 7] = [
    "run",
    "setting",
    "backbone",
    "task",
    "mean_acc_pct",
    "ci95_pct",
    "episodes",
];

fn cells(r: &Row) -> [String; 7] {
    [
        r.run.clone(),
        r.setting.clone(),
        r.backbone.clone(),
        r.task.clone(),
        format!("{:.2}", r.mean_pct),
        format!("{:.2}", r.ci95_pct),
        r.episodes.to_string(),
    ]
}

pub fn table_csv(rows: &[Row]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(HEADER).map_err(io)?;
    for r in rows {
        w.write_record(cells(r)).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("utf-8"))
}

pub fn table_text(rows: &[Row]) -> String {
    let body: Vec<[String; 7]> = rows.iter().map(cells).collect();
    let mut widths: Vec<usize> = HEADER.iter().map(|h| h.len()).collect();
    for r in &body {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cols: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cols
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if i >= 4 {
                    format!("{c:>w$}")
                } else {
                    format!("{c:<w$}")
                }
            })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(HEADER.to_vec(), &mut out);
    line(
        widths
            .iter()
            .map(|w| &"----------------------------------------"[..(*w).min(40)])
            .collect(),
        &mut out,
    );
    for r in &body {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

fn polyline(
    points: &[(f64, f64)],
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xr: (f64, f64),
    yr: (f64, f64),
) -> String {
    let sx = |x: f64| {
        x0 + if xr.1 > xr.0 {
            (x - xr.0) / (xr.1 - xr.0) * w
        } else {
            w / 2.0
        }
    };
    let sy = |y: f64| {
        y0 + h
            - if yr.1 > yr.0 {
                (y - yr.0) / (yr.1 - yr.0) * h
            } else {
                h / 2.0
            }
    };
    points
        .iter()
        .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Two panels: training loss, and training/validation accuracy per epoch.
pub fn render_curves(title: &str, history: &[EpochRecord]) -> String {
    let (pw, ph, pad) = (320.0, 200.0, 50.0);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#,
        2.0 * pw + 3.0 * pad,
        ph + 2.5 * pad
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{pad}" y="20" font-size="13">{}</text>"#,
        escape(title)
    );
    let epochs: Vec<f64> = history.iter().map(|r| r.epoch as f64).collect();
    let xr = (
        epochs.first().copied().unwrap_or(0.0),
        epochs.last().copied().unwrap_or(1.0),
    );
    type Series<'a> = (&'a str, &'a str, Vec<(f64, f64)>);
    let loss: Vec<(f64, f64)> = history
        .iter()
        .map(|r| (r.epoch as f64, r.train_loss))
        .collect();
    let tacc: Vec<(f64, f64)> = history
        .iter()
        .map(|r| (r.epoch as f64, r.train_acc))
        .collect();
    let vacc: Vec<(f64, f64)> = history
        .iter()
        .filter_map(|r| r.val_acc.map(|v| (r.epoch as f64, v)))
        .collect();
    let panels: [(&str, Vec<Series>); 2] = [
        ("train loss", vec![("loss", "#1f77b4", loss)]),
        (
            "accuracy",
            vec![("train", "#1f77b4", tacc), ("val", "#d62728", vacc)],
        ),
    ];
    for (p, (name, series)) in panels.iter().enumerate() {
        let x0 = pad + p as f64 * (pw + pad);
        let y0 = 1.5 * pad;
        let ys: Vec<f64> = series
            .iter()
            .flat_map(|s| s.2.iter().map(|q| q.1))
            .collect();
        let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let yr = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
        let _ = writeln!(
            svg,
            r##"<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
        );
        let _ = writeln!(svg, r#"<text x="{x0}" y="{}">{name}</text>"#, y0 - 6.0);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#,
            x0 - 4.0,
            y0 + 10.0,
            yr.1
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#,
            x0 - 4.0,
            y0 + ph,
            yr.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x0}" y="{}">epoch {}</text>"#,
            y0 + ph + 14.0,
            xr.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            x0 + pw,
            y0 + ph + 14.0,
            xr.1
        );
        for (i, (label, colour, pts)) in series.iter().enumerate() {
            if !pts.is_empty() {
                let _ = writeln!(
                    svg,
                    r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
                    polyline(pts, x0, y0, pw, ph, xr, yr)
                );
            }
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" fill="{colour}">{label}</text>"#,
                x0 + pw - 60.0,
                y0 + 14.0 * (i + 1) as f64
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn run(g: &GlobalArgs, a: &ReportArgs) -> Result<(), CliError> {
    let mut rows = Vec::new();
    let mut curves: Vec<(String, Vec<EpochRecord>)> = Vec::new();
    for dir in &a.runs {
        require_path(dir, "run directory")?;
        let run = RunDir::open(dir);
        let report = run
            .read_report()
            .map_err(|e| CliError::Data(e.to_string()))?;
        let row = row_for(dir, &report)?;
        if dir.join(fspc_core::train::HISTORY_FILE).exists() {
            let history = run
                .read_history()
                .map_err(|e| CliError::Data(e.to_string()))?;
            curves.push((row.run.clone(), history));
        }
        rows.push(row);
    }
    order_rows(&mut rows);
    let out = output_dir(g, "report");
    let write = |path: PathBuf, text: &str| {
        std::fs::write(&path, text)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
    };
    std::fs::create_dir_all(out.join("curves"))
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))?;
    let text = table_text(&rows);
    write(out.join("table.csv"), &table_csv(&rows)?)?;
    write(out.join("table.txt"), &text)?;
    for (name, history) in &curves {
        write(
            out.join("curves").join(format!("{name}.svg")),
            &render_curves(name, history),
        )?;
    }
    print!("{text}");
    println!(
        "wrote {} rows and {} curve plots to {}",
        rows.len(),
        curves.len(),
        out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(setting: &str, run: &str) -> Row {
        Row {
            run: run.into(),
            setting: setting.into(),
            backbone: "dgcnn".into(),
            task: "5w1s15q".into(),
            mean_pct: 50.0,
            ci95_pct: 1.0,
            episodes: 10,
        }
    }

    #[test]
    fn rows_follow_ablation_order() {
        let mut rows = vec![
            row("+CIA", "d"),
            row("+CIF", "c"),
            row("base", "a"),
            row("+SCI", "b"),
        ];
        order_rows(&mut rows);
        let order: Vec<&str> = rows.iter().map(|r| r.setting.as_str()).collect();
        assert_eq!(order, SETTING_ORDER);
    }

    #[test]
    fn text_table_is_aligned() {
        let t = table_text(&[row("base", "a-long-run-name"), row("+CIA", "b")]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        let col = lines[0].find("setting").unwrap();
        assert_eq!(lines[2].find("base").unwrap(), col);
        assert_eq!(lines[3].find("+CIA").unwrap(), col);
    }

    #[test]
    fn curves_render_every_series() {
        let h: Vec<EpochRecord> = (0..3)
            .map(|e| EpochRecord {
                epoch: e,
                lr: 1e-3,
                train_loss: 1.0 / (e + 1) as f64,
                train_acc: 0.5,
                val_acc: Some(0.6),
            })
            .collect();
        let svg = render_curves("run <1>", &h);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains("run &lt;1&gt;"));
    }
}
