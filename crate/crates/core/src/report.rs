//! Result tables and plots.
//!
//! Plots are plain SVG. Every plotted value is also written as a `data-*`
//! attribute on its element so tests and downstream tools can read the
//! numbers back without parsing geometry.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

/// One row of `results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment_id: String,
    pub audience: String,
    pub n_f: u64,
    pub n_p: u64,
    pub s_f_b: f64,
    pub s_p_b: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "Z")]
    pub z: f64,
    pub p: f64,
    pub significant: bool,
    pub holm_significant: bool,
}

/// One row of `fractions.csv`: the Black fraction of one ad's recipients
/// with its confidence interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractionRow {
    pub experiment_id: String,
    pub audience: String,
    /// `for_profit` or `public`.
    pub ad: String,
    pub school: String,
    pub n: u64,
    pub n_black: u64,
    pub fraction: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// One row of `verdict_rates.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictRate {
    pub experiment_id: String,
    pub family: String,
    pub trials: u64,
    pub significant_rate: f64,
    pub holm_rate: f64,
}

pub fn write_rows<T: Serialize, W: Write>(rows: &[T], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>, R: Read>(reader: R) -> Result<Vec<T>, csv::Error> {
    csv::Reader::from_reader(reader).deserialize().collect()
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const W: f64 = 480.0;
const H: f64 = 320.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn header(out: &mut String, title: &str, kind: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" data-plot="{kind}">"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        W / 2.0,
        esc(title)
    );
}

fn y_axis(out: &mut String, lo: f64, hi: f64, ticks: &[f64]) {
    let plot_h = H - TOP - BOTTOM;
    let _ = writeln!(
        out,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#,
        H - BOTTOM
    );
    for &t in ticks {
        let y = H - BOTTOM - (t - lo) / (hi - lo) * plot_h;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="10">{t}</text>"#,
            LEFT - 5.0,
            y + 3.0
        );
    }
}

/// Dot plot of the two ads' Black fractions with confidence-interval bars.
pub fn fraction_plot(experiment_id: &str, rows: &[FractionRow]) -> String {
    let mut out = String::new();
    header(&mut out, &format!("{experiment_id}: fraction of Black recipients"), "fractions");
    y_axis(&mut out, 0.0, 1.0, &[0.0, 0.25, 0.5, 0.75, 1.0]);
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let y = |v: f64| H - BOTTOM - v.clamp(0.0, 1.0) * plot_h;
    let step = plot_w / (rows.len().max(1) as f64 + 1.0);
    for (i, r) in rows.iter().enumerate() {
        let x = LEFT + step * (i as f64 + 1.0);
        let _ = writeln!(
            out,
            r#"<g data-experiment="{}" data-ad="{}" data-school="{}" data-n="{}" data-fraction="{}" data-ci-low="{}" data-ci-high="{}">"#,
            esc(&r.experiment_id),
            esc(&r.ad),
            esc(&r.school),
            r.n,
            r.fraction,
            r.ci_low,
            r.ci_high
        );
        let _ = writeln!(
            out,
            r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#,
            y(r.ci_low),
            y(r.ci_high)
        );
        let _ = writeln!(out, r#"<circle cx="{x:.1}" cy="{:.1}" r="4"/>"#, y(r.fraction));
        let _ = writeln!(
            out,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="10">{}</text>"#,
            H - BOTTOM + 16.0,
            esc(&r.school)
        );
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    out
}

/// Bar chart of Z statistics for one family of tests, with a dashed line at
/// the critical value.
pub fn z_chart(family: &str, rows: &[&ResultRow], z_alpha: f64) -> String {
    let mut out = String::new();
    header(&mut out, &format!("{family}: Z statistics"), "z");
    let max = rows.iter().map(|r| r.z.abs()).fold(z_alpha, f64::max).ceil() + 1.0;
    let min = rows.iter().map(|r| r.z).fold(0.0, f64::min).floor();
    let ticks: Vec<f64> = (min as i64..=max as i64).step_by(((max - min) / 5.0).ceil().max(1.0) as usize).map(|t| t as f64).collect();
    y_axis(&mut out, min, max, &ticks);
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let y = |v: f64| H - BOTTOM - (v - min) / (max - min) * plot_h;
    let slot = plot_w / rows.len().max(1) as f64;
    for (i, r) in rows.iter().enumerate() {
        let x = LEFT + slot * i as f64 + slot * 0.15;
        let (top, bottom) = if r.z >= 0.0 { (y(r.z), y(0.0)) } else { (y(0.0), y(r.z)) };
        let fill = if r.holm_significant { "#b2182b" } else { "#999999" };
        let _ = writeln!(
            out,
            r#"<rect x="{x:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="{fill}" data-experiment="{}" data-z="{}" data-significant="{}" data-holm-significant="{}"/>"#,
            slot * 0.7,
            bottom - top,
            esc(&r.experiment_id),
            r.z,
            r.significant,
            r.holm_significant
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="9" transform="rotate(-30 {:.1} {:.1})">{}</text>"#,
            x + slot * 0.35,
            H - BOTTOM + 14.0,
            x + slot * 0.35,
            H - BOTTOM + 14.0,
            esc(&r.experiment_id)
        );
    }
    let ty = y(z_alpha);
    let _ = writeln!(
        out,
        r#"<line x1="{LEFT}" y1="{ty:.1}" x2="{}" y2="{ty:.1}" stroke="black" stroke-dasharray="4 3" data-threshold="{z_alpha}"/>"#,
        W - RIGHT
    );
    out.push_str("</svg>\n");
    out
}

/// Markdown table of school pairs: `(pair_id, skewed school, public school)`.
pub fn pairs_table(pairs: &[(String, String, String)]) -> String {
    let mut out = String::from("| Pair | Skewed school | Public school |\n|---|---|---|\n");
    for (id, f, p) in pairs {
        let _ = writeln!(out, "| {id} | {f} | {p} |");
    }
    out
}

/// Human-readable report over the analysis tables.
pub fn report_markdown(
    results: &[ResultRow],
    pairs: &[(String, String, String)],
    rates: &[VerdictRate],
    alpha: f64,
) -> String {
    let mut out = String::from("# Delivery skew audit\n\n## School pairs\n\n");
    out.push_str(&pairs_table(pairs));
    let _ = write!(
        out,
        "\n## Results (terminal snapshots, one-sided test at alpha = {alpha})\n\n\
         | Experiment | Audience | n_f | n_p | s_f,b | s_p,b | D | Z | p | Significant | Holm |\n\
         |---|---|---|---|---|---|---|---|---|---|---|\n"
    );
    for r in results {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {:.3} | {:.3} | {:.3} | {:.2} | {:.2e} | {} | {} |",
            r.experiment_id,
            r.audience,
            r.n_f,
            r.n_p,
            r.s_f_b,
            r.s_p_b,
            r.d,
            r.z,
            r.p,
            yes_no(r.significant),
            yes_no(r.holm_significant)
        );
    }
    let flagged = results.iter().filter(|r| r.holm_significant).count();
    let _ = write!(
        out,
        "\n{flagged} of {} experiments show significant skew toward Black users after Holm correction.\n",
        results.len()
    );
    if !rates.is_empty() {
        out.push_str(
            "\n## Monte Carlo verdict rates\n\n| Experiment | Family | Trials | Significant | Holm |\n|---|---|---|---|---|\n",
        );
        for r in rates {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {:.3} | {:.3} |",
                r.experiment_id, r.family, r.trials, r.significant_rate, r.holm_rate
            );
        }
    }
    out
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}
