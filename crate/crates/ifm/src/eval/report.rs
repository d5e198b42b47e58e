use std::fmt::Write;

use super::EvalResult;

pub const CSV_HEADER: &str = "model,split,n,digit_acc,texture_acc,balance";

/// A published accuracy pair, in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub model: &'static str,
    pub digit_pct: f64,
    pub texture_pct: Option<f64>,
}

const REFERENCE: [ReferenceRow; 4] = [
    ReferenceRow { model: "Baseline_Digit", digit_pct: 12.44, texture_pct: Some(95.07) },
    ReferenceRow { model: "Baseline_Texture", digit_pct: 12.05, texture_pct: Some(96.44) },
    ReferenceRow { model: "ours_Digit", digit_pct: 54.54, texture_pct: Some(40.41) },
    ReferenceRow { model: "ours_Texture", digit_pct: 31.78, texture_pct: Some(69.00) },
];

/// Literature row for the invertible-network comparison; texture not reported.
pub const ICE_FI_REVNET: ReferenceRow = ReferenceRow {
    model: "iCE fi-RevNet",
    digit_pct: 40.01,
    texture_pct: None,
};

pub fn paper_reference_rows() -> &'static [ReferenceRow] {
    &REFERENCE
}

pub fn render_csv(results: &[EvalResult]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in results {
        writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.6}",
            r.model,
            r.split,
            r.n,
            r.digit_accuracy,
            r.texture_accuracy,
            r.balance()
        )
        .unwrap();
    }
    s
}

/// Reads rows written by [`render_csv`]. The header line is optional and the
/// balance column is recomputed rather than trusted.
pub fn parse_csv(text: &str) -> Result<Vec<EvalResult>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line == CSV_HEADER {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(format!("line {}: expected 6 columns, found {}", i + 1, cols.len()));
        }
        let num = |k: usize| {
            cols[k]
                .parse::<f64>()
                .ok()
                .filter(|v| (0.0..=1.0).contains(v))
                .ok_or_else(|| format!("line {}: `{}` is not an accuracy", i + 1, cols[k]))
        };
        out.push(EvalResult {
            model: cols[0].to_string(),
            split: cols[1].to_string(),
            n: cols[2]
                .parse()
                .map_err(|_| format!("line {}: `{}` is not a count", i + 1, cols[2]))?,
            digit_accuracy: num(3)?,
            texture_accuracy: num(4)?,
        });
    }
    Ok(out)
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

/// Aligned text table of measured rows, optionally followed by the published
/// numbers and the literature row.
pub fn render_table(results: &[EvalResult], with_reference: bool, with_literature: bool) -> String {
    let mut rows: Vec<[String; 5]> = vec![[
        "model".into(),
        "source".into(),
        "acc (digit)".into(),
        "acc (texture)".into(),
        "balance".into(),
    ]];
    for r in results {
        rows.push([
            r.model.clone(),
            format!("measured/{}", r.split),
            pct(r.digit_accuracy),
            pct(r.texture_accuracy),
            format!("{:.3}", r.balance()),
        ]);
    }
    let reference_row = |row: &ReferenceRow| {
        let balance = row
            .texture_pct
            .map(|t| format!("{:.3}", row.digit_pct.min(t) / row.digit_pct.max(t)))
            .unwrap_or_else(|| "-".into());
        [
            row.model.to_string(),
            "published".into(),
            format!("{:.2}%", row.digit_pct),
            row.texture_pct.map(|t| format!("{t:.2}%")).unwrap_or_else(|| "-".into()),
            balance,
        ]
    };
    if with_reference {
        rows.extend(REFERENCE.iter().map(reference_row));
    }
    if with_literature {
        rows.push(reference_row(&ICE_FI_REVNET));
    }
    let widths: Vec<usize> = (0..5).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap()).collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, &w))| if c < 2 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        writeln!(out, "{}", line.join("  ").trim_end()).unwrap();
        if i == 0 {
            writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 8)).unwrap();
        }
    }
    out
}
