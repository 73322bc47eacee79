//! Plain-text tables for the human-readable outputs. Machine-readable files
//! carry full precision; numbers here are rounded for display.

/// Column-aligned text with a rule under the header.
pub fn render(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut out = line(headers.to_vec());
    out.push('\n');
    out.push_str(&line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect()));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

pub fn fixed(v: f64, decimals: usize) -> String {
    if v.is_finite() {
        format!("{v:.decimals$}")
    } else {
        v.to_string()
    }
}

/// Estimate with its significance stars, e.g. `0.512***`.
pub fn starred(v: f64, stars: &str) -> String {
    format!("{}{stars}", fixed(v, 3))
}

pub fn parenthesized(v: f64) -> String {
    format!("({})", fixed(v, 3))
}

pub const STAR_NOTE: &str = "*** p<0.001, ** p<0.01, * p<0.05, • p<0.1";
