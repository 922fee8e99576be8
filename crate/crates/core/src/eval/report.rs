//! Report files: TSV and Markdown tables plus SVG/PNG bar charts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::ablation::{AblationReport, SIGNIFICANCE_LEVEL};
use super::confusion::ConfusionReport;
use super::EvalError;
use crate::corpus::{CorpusStats, Taxonomy};

#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub label: String,
    pub value: f64,
    /// Optional low/high whisker drawn over the bar.
    pub range: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarChart {
    pub title: String,
    pub bars: Vec<Bar>,
}

const WIDTH: u32 = 720;
const HEIGHT: u32 = 420;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 90.0;

struct Layout {
    slot: f64,
    bar: f64,
    scale: f64,
    base: f64,
}

impl BarChart {
    pub fn counts<'a>(title: &str, items: impl IntoIterator<Item = (&'a str, usize)>) -> Self {
        BarChart {
            title: title.into(),
            bars: items
                .into_iter()
                .map(|(label, n)| Bar {
                    label: label.into(),
                    value: n as f64,
                    range: None,
                })
                .collect(),
        }
    }

    fn top(&self) -> f64 {
        let max = self
            .bars
            .iter()
            .map(|b| b.range.map_or(b.value, |(_, hi)| hi.max(b.value)))
            .fold(0.0, f64::max);
        if max > 0.0 {
            max
        } else {
            1.0
        }
    }

    fn layout(&self) -> Layout {
        let plot_w = WIDTH as f64 - MARGIN_LEFT - MARGIN_RIGHT;
        let plot_h = HEIGHT as f64 - MARGIN_TOP - MARGIN_BOTTOM;
        let slot = plot_w / self.bars.len().max(1) as f64;
        Layout {
            slot,
            bar: slot * 0.7,
            scale: plot_h / self.top(),
            base: HEIGHT as f64 - MARGIN_BOTTOM,
        }
    }

    pub fn to_svg(&self) -> String {
        let l = self.layout();
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN_LEFT}" y1="{0}" x2="{1}" y2="{0}" stroke="#333"/>"##,
            l.base,
            WIDTH as f64 - MARGIN_RIGHT
        );
        let _ = writeln!(s, r##"<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{}" stroke="#333"/>"##, l.base);
        let top = self.top();
        for k in 0..=4 {
            let v = top * k as f64 / 4.0;
            let y = l.base - v * l.scale;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
                MARGIN_LEFT - 6.0,
                y + 4.0,
                tick(v)
            );
        }
        for (i, b) in self.bars.iter().enumerate() {
            let x = MARGIN_LEFT + i as f64 * l.slot + (l.slot - l.bar) / 2.0;
            let h = b.value * l.scale;
            let _ = writeln!(
                s,
                r##"<rect class="bar" data-label="{}" data-value="{}" x="{x:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="#4a78b5"/>"##,
                escape(&b.label),
                b.value,
                l.base - h,
                l.bar
            );
            if let Some((lo, hi)) = b.range {
                let cx = x + l.bar / 2.0;
                let _ = writeln!(
                    s,
                    r##"<line class="range" x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="#222"/>"##,
                    l.base - lo * l.scale,
                    l.base - hi * l.scale
                );
            }
            let lx = x + l.bar / 2.0;
            let ly = l.base + 12.0;
            let _ = writeln!(
                s,
                r#"<text x="{lx:.1}" y="{ly:.1}" text-anchor="end" transform="rotate(-40 {lx:.1} {ly:.1})">{}</text>"#,
                escape(&b.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }

    /// Raster rendering of the bars and axes (no text).
    pub fn to_png_image(&self) -> RgbImage {
        let l = self.layout();
        let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
        let dark = Rgb([51, 51, 51]);
        fill(&mut img, MARGIN_LEFT, l.base, WIDTH as f64 - MARGIN_RIGHT, l.base + 1.0, dark);
        fill(&mut img, MARGIN_LEFT - 1.0, MARGIN_TOP, MARGIN_LEFT, l.base, dark);
        for (i, b) in self.bars.iter().enumerate() {
            let x = MARGIN_LEFT + i as f64 * l.slot + (l.slot - l.bar) / 2.0;
            fill(&mut img, x, l.base - b.value * l.scale, x + l.bar, l.base, Rgb([74, 120, 181]));
            if let Some((lo, hi)) = b.range {
                let cx = x + l.bar / 2.0;
                fill(&mut img, cx - 0.5, l.base - hi * l.scale, cx + 0.5, l.base - lo * l.scale, Rgb([34, 34, 34]));
            }
        }
        img
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>, EvalError> {
        let svg = dir.join(format!("{stem}.svg"));
        write_text(&svg, &self.to_svg())?;
        let png = dir.join(format!("{stem}.png"));
        self.to_png_image()
            .save(&png)
            .map_err(|e| EvalError::Io(format!("{}: {e}", png.display())))?;
        Ok(vec![svg, png])
    }
}

fn fill(img: &mut RgbImage, x0: f64, y0: f64, x1: f64, y1: f64, color: Rgb<u8>) {
    let clamp_x = |v: f64| (v.round().max(0.0) as u32).min(img.width());
    let clamp_y = |v: f64| (v.round().max(0.0) as u32).min(img.height());
    let (xa, xb) = (clamp_x(x0.min(x1)), clamp_x(x0.max(x1)));
    let (ya, yb) = (clamp_y(y0.min(y1)), clamp_y(y0.max(y1)));
    for y in ya..yb {
        for x in xa..xb {
            img.put_pixel(x, y, color);
        }
    }
}

fn tick(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn write_text(path: &Path, text: &str) -> Result<(), EvalError> {
    std::fs::write(path, text).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))
}

/// `task combo seed accuracy`, one line per cell.
pub fn ablation_tsv(reports: &[AblationReport]) -> String {
    let mut out = String::from("task\tcombo\tseed\taccuracy\n");
    for r in reports {
        for row in &r.rows {
            for (seed, acc) in r.seeds.iter().zip(&row.accuracies) {
                let _ = writeln!(out, "{}\t{}\t{seed}\t{acc:.6}", r.task.name(), row.combo);
            }
        }
    }
    out
}

pub fn significance_tsv(reports: &[AblationReport]) -> String {
    let mut out = String::from("task\tcombo_a\tcombo_b\tw_plus\tw_minus\tp_value\tn_effective\tsignificant\n");
    for r in reports {
        for (i, a) in r.rows.iter().enumerate() {
            for (j, b) in r.rows.iter().enumerate() {
                if let Some(t) = r.significance[i][j] {
                    let _ = writeln!(
                        out,
                        "{}\t{}\t{}\t{}\t{}\t{:.6}\t{}\t{}",
                        r.task.name(),
                        a.combo,
                        b.combo,
                        t.w_plus,
                        t.w_minus,
                        t.p_value,
                        t.n_effective,
                        t.p_value < SIGNIFICANCE_LEVEL
                    );
                }
            }
        }
    }
    out
}

fn pooled_confusion(r: &AblationReport, row: usize) -> Option<ConfusionReport> {
    let mut it = r.rows[row].confusions.iter();
    let first = it.next()?.clone();
    it.try_fold(first, |acc, c| acc.merged(c)).ok()
}

pub fn summary_markdown(reports: &[AblationReport]) -> String {
    let mut out = String::from("# Ablation summary\n");
    for r in reports {
        let title = match r.task {
            super::Task::Speech => "Speech-act classification",
            super::Task::Search => "Search-action prediction",
        };
        let _ = writeln!(out, "\n## {title}\n");
        let _ = writeln!(
            out,
            "Accuracy over {} seeds. `*` marks rows whose accuracies differ from the best-by-median row at p<{SIGNIFICANCE_LEVEL} (Wilcoxon signed-rank, two-sided).\n",
            r.seeds.len()
        );
        out.push_str("| Channels | Maximum | Median | Mean | p vs best | Sig. |\n");
        out.push_str("|---|---:|---:|---:|---:|:---:|\n");
        for (i, row) in r.rows.iter().enumerate() {
            let p = r.p_vs_best(i).map_or("-".to_string(), |p| format!("{p:.4}"));
            let sig = if r.significant_vs_best(i) { "*" } else { "" };
            let _ = writeln!(
                out,
                "| {} | {:.3} | {:.3} | {:.3} | {p} | {sig} |",
                row.combo,
                row.max(),
                row.median(),
                row.mean()
            );
        }
        let _ = writeln!(
            out,
            "\nBest by median: **{}**. Best by maximum: **{}**.",
            r.rows[r.best_by_median].combo, r.rows[r.best_by_max].combo
        );
        if let Some(c) = pooled_confusion(r, r.best_by_median) {
            if !c.top_confusions.is_empty() {
                let _ = writeln!(out, "\nMost frequent confusions of the best row, pooled over seeds:\n");
                out.push_str("| Gold | Predicted | Count |\n|---|---|---:|\n");
                for (g, p, n) in c.top_confusions.iter().take(10) {
                    let _ = writeln!(out, "| {g} | {p} | {n} |");
                }
            }
        }
        let m = &r.config.model;
        let _ = writeln!(
            out,
            "\nSettings: hidden {}, attention {}, dropout {}/{}/{}, lr {}, batch {}, epochs {}, split {} at {} level, act source {}.",
            m.hidden_units,
            m.attention_dim,
            m.dropout,
            m.recurrent_dropout,
            m.post_attention_dropout,
            m.learning_rate,
            m.batch_size,
            m.epochs,
            r.config.split_ratio,
            match r.config.split_level {
                super::SplitLevel::Instance => "instance",
                super::SplitLevel::Session => "session",
            },
            r.config.act_source
        );
    }
    out
}

pub fn accuracy_chart(r: &AblationReport) -> BarChart {
    BarChart {
        title: format!("{} accuracy by channel combination (median, min-max)", r.task.name()),
        bars: r
            .rows
            .iter()
            .map(|row| Bar {
                label: row.combo.to_string(),
                value: row.median(),
                range: Some((
                    row.accuracies.iter().copied().fold(f64::INFINITY, f64::min),
                    row.max(),
                )),
            })
            .collect(),
    }
}

/// Label-frequency and per-task charts of a corpus.
pub fn corpus_charts(stats: &CorpusStats) -> Vec<(&'static str, BarChart)> {
    vec![
        (
            "speech_act_counts",
            BarChart::counts("Speech acts", stats.speech_acts.iter().map(|(a, n)| (a.code(), *n))),
        ),
        (
            "search_action_counts",
            BarChart::counts(
                "Search actions",
                stats.search_action_labels.iter().map(|(a, n)| (a.code(), *n)),
            ),
        ),
        (
            "task_utterance_counts",
            BarChart::counts("Utterances per task", stats.task_utterances.iter().map(|(t, n)| (t.as_str(), *n))),
        ),
    ]
}

/// Writes the report files into `out_dir` and returns their paths. Nothing
/// is written (and the directory is not created) when there is nothing to
/// report.
pub fn render_report(reports: &[AblationReport], stats: Option<&CorpusStats>, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, EvalError> {
    if reports.is_empty() && stats.is_none() {
        return Ok(Vec::new());
    }
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| EvalError::Io(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();
    if !reports.is_empty() {
        for (name, text) in [
            ("ablation_report.tsv", ablation_tsv(reports)),
            ("significance.tsv", significance_tsv(reports)),
            ("summary.md", summary_markdown(reports)),
        ] {
            let path = dir.join(name);
            write_text(&path, &text)?;
            written.push(path);
        }
        for r in reports {
            if let Some(c) = pooled_confusion(r, r.best_by_median) {
                let path = dir.join(format!("confusion_{}.tsv", r.task.name()));
                write_text(&path, &c.to_tsv())?;
                written.push(path);
            }
            written.extend(accuracy_chart(r).write(dir, &format!("accuracy_{}", r.task.name()))?);
        }
    }
    if let Some(stats) = stats {
        for (stem, chart) in corpus_charts(stats) {
            written.extend(chart.write(dir, stem)?);
        }
    }
    Ok(written)
}
