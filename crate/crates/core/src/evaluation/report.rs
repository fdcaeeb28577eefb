//! Text, CSV and SVG renderings of evaluation results.

use std::fmt::Write;

use super::cv::{ComparisonReport, EvalReport, TransferReport};
use crate::datamodel::EXEMPLARS_PER_CATEGORY;

pub const CATEGORY_NAMES: [&str; 6] = ["HB", "HF", "AB", "AF", "FV", "IO"];
const CATEGORY_COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#e6c619"];

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// Chance accuracy as printed in summaries.
pub fn chance_label(n_classes: usize) -> String {
    let chance = pct(1.0 / n_classes as f64);
    if n_classes == 72 {
        format!("{chance}% (1/72; also quoted truncated as 1.38%)")
    } else {
        format!("{chance}%")
    }
}

/// `"6-class accuracy: 50.37 ± 6.56% over 10 folds (chance 16.67%)"`.
pub fn accuracy_line(r: &EvalReport) -> String {
    format!(
        "{}-class accuracy: {} ± {}% over {} folds (chance {})",
        r.n_classes,
        pct(r.mean_accuracy),
        pct(r.std_accuracy),
        r.folds.len(),
        chance_label(r.n_classes)
    )
}

fn class_name(n_classes: usize, c: usize) -> String {
    if n_classes == CATEGORY_NAMES.len() {
        CATEGORY_NAMES[c].to_string()
    } else {
        format!("{}{}", CATEGORY_NAMES[c / EXEMPLARS_PER_CATEGORY], c % EXEMPLARS_PER_CATEGORY + 1)
    }
}

/// One row per fold plus mean and standard deviation, in percent.
pub fn eval_csv(r: &EvalReport) -> String {
    let mut s = String::from("subject,method,fold,n_test,accuracy\n");
    for f in &r.folds {
        let _ = writeln!(s, "{},{},{},{},{}", r.subject_id, r.method, f.fold + 1, f.n_test, pct(f.accuracy));
    }
    let _ = writeln!(s, "{},{},mean,,{}", r.subject_id, r.method, pct(r.mean_accuracy));
    let _ = writeln!(s, "{},{},std,,{}", r.subject_id, r.method, pct(r.std_accuracy));
    s
}

/// Fold-averaged precision, recall and F1 per class.
pub fn per_class_csv(r: &EvalReport) -> String {
    let mut s = String::from("class,precision,recall,f1\n");
    for c in 0..r.n_classes {
        let _ = writeln!(
            s,
            "{},{:.3},{:.3},{:.3}",
            class_name(r.n_classes, c),
            r.precision[c],
            r.recall[c],
            r.f1[c]
        );
    }
    s
}

pub fn per_exemplar_csv(r: &EvalReport) -> String {
    let mut s = String::from("exemplar,category,accuracy\n");
    for (e, a) in r.per_exemplar_accuracy.iter().enumerate() {
        let acc = a.map(pct).unwrap_or_default();
        let _ = writeln!(s, "{},{},{}", e + 1, CATEGORY_NAMES[e / EXEMPLARS_PER_CATEGORY], acc);
    }
    s
}

pub fn comparison_csv(c: &ComparisonReport) -> String {
    let mut s = String::from("method");
    for subj in &c.subjects {
        let _ = write!(s, ",{subj}");
    }
    s.push_str(",mean,std,t,p,stars\n");
    for row in &c.rows {
        s.push_str(&row.method);
        for a in &row.per_subject {
            let _ = write!(s, ",{}", pct(*a));
        }
        let (t, p) = row
            .test
            .as_ref()
            .map_or((String::new(), String::new()), |t| (format!("{:.4}", t.t), format!("{:.4}", t.p)));
        let _ = writeln!(s, ",{},{},{t},{p},{}", pct(row.mean), pct(row.std), row.stars);
    }
    s
}

/// Fixed-width table of mean ± std per method with significance stars.
pub fn comparison_table(c: &ComparisonReport) -> String {
    let width = c.rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
    let mut s = format!("{:<width$}  {}-class accuracy (%)\n", "Method", c.n_classes);
    for row in &c.rows {
        let line = format!("{:<width$}  {} ± {} {}", row.method, pct(row.mean), pct(row.std), row.stars);
        let _ = writeln!(s, "{}", line.trim_end());
    }
    let _ = writeln!(
        s,
        "reference: {}; {} subject(s); *p-value < 0.05, **p-value < 0.01 (paired t-test); chance {}",
        c.reference,
        c.subjects.len(),
        chance_label(c.n_classes)
    );
    s
}

pub fn transfer_csv(t: &TransferReport) -> String {
    let mut s = String::from("fold,from_scratch_72,transferred_72,frozen_unchanged\n");
    for f in &t.folds {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            f.fold + 1,
            pct(f.scratch_accuracy),
            pct(f.transferred_accuracy),
            f.frozen_unchanged
        );
    }
    let _ = writeln!(
        s,
        "mean,{},{},{}",
        pct(t.from_scratch.mean_accuracy),
        pct(t.transferred.mean_accuracy),
        t.frozen_unchanged
    );
    s
}

/// Row-normalized confusion matrix as a grayscale heat map.
pub fn confusion_svg(matrix: &[Vec<f64>], title: &str) -> String {
    let n = matrix.len();
    let cell = if n > 12 { 8.0 } else { 48.0 };
    let margin = 60.0;
    let size = margin + cell * n as f64 + 10.0;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"11\">\n",
        size + 20.0
    );
    let _ = writeln!(s, "<text x=\"{margin}\" y=\"14\">{}</text>", escape(title));
    for (i, row) in matrix.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
            let (x, y) = (margin + cell * j as f64, margin + cell * i as f64);
            let _ = writeln!(
                s,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({shade},{shade},{shade})\"><title>{i}->{j}: {v:.3}</title></rect>"
            );
            if n <= 12 {
                let color = if v > 0.5 { "white" } else { "black" };
                let _ = writeln!(
                    s,
                    "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{color}\">{v:.2}</text>",
                    x + cell / 2.0,
                    y + cell / 2.0 + 4.0
                );
            }
        }
        if n <= 12 {
            let name = class_name(n, i);
            let y = margin + cell * i as f64 + cell / 2.0 + 4.0;
            let _ = writeln!(s, "<text x=\"{}\" y=\"{y}\" text-anchor=\"end\">{name}</text>", margin - 4.0);
            let x = margin + cell * i as f64 + cell / 2.0;
            let _ = writeln!(s, "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{name}</text>", margin - 6.0);
        }
    }
    let _ = writeln!(s, "<text x=\"{margin}\" y=\"{}\">rows: true class, columns: predicted</text>", size + 12.0);
    s.push_str("</svg>\n");
    s
}

/// Bar per exemplar colored by category, with a dashed chance line.
pub fn exemplar_svg(per_exemplar: &[Option<f64>], chance: f64, title: &str) -> String {
    let (bar, gap, height, left, top) = (8.0, 2.0, 200.0, 40.0, 24.0);
    let width = left + (bar + gap) * per_exemplar.len() as f64 + 10.0;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"11\">\n",
        top + height + 30.0
    );
    let _ = writeln!(s, "<text x=\"{left}\" y=\"14\">{}</text>", escape(title));
    let _ = writeln!(
        s,
        "<line x1=\"{left}\" y1=\"{}\" x2=\"{left}\" y2=\"{}\" stroke=\"black\"/>",
        top,
        top + height
    );
    for tick in [0.0, 0.5, 1.0] {
        let y = top + height * (1.0 - tick);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>", left - 4.0, y + 4.0, tick * 100.0);
    }
    for (e, a) in per_exemplar.iter().enumerate() {
        let v = a.unwrap_or(0.0).clamp(0.0, 1.0);
        let x = left + gap + (bar + gap) * e as f64;
        let color = CATEGORY_COLORS[(e / EXEMPLARS_PER_CATEGORY).min(5)];
        let _ = writeln!(
            s,
            "<rect x=\"{x}\" y=\"{}\" width=\"{bar}\" height=\"{}\" fill=\"{color}\"><title>exemplar {}: {}</title></rect>",
            top + height * (1.0 - v),
            height * v,
            e + 1,
            a.map(pct).unwrap_or_else(|| "n/a".into())
        );
    }
    let y = top + height * (1.0 - chance);
    let _ = writeln!(
        s,
        "<line x1=\"{left}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"black\" stroke-dasharray=\"4 3\"/>",
        width - 10.0
    );
    let _ = writeln!(s, "<text x=\"{left}\" y=\"{}\">exemplar (grouped by category), accuracy %</text>", top + height + 20.0);
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
