//! Trace CSVs, plot data and SVG charts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::MarketTrace;
use crate::error::{Error, Result};
use crate::network::NetworkCase;

/// `v` with 10 significant digits, in plain decimal notation when the
/// magnitude allows it.
pub fn format_sig(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.9e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..].parse().expect("integer exponent");
    if !(-6..=15).contains(&exp) {
        return sci;
    }
    let decimals = (9 - exp).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Writes the trace as CSV: `k, b_*, xopt_*, q_*, beta, dist_to_bstar`, and
/// with `robust` also `d_*, payoff_*`.
pub fn trace_csv(trace: &MarketTrace, robust: bool) -> String {
    let n = trace.n_generators();
    let mut out = String::from("k");
    for prefix in ["b", "xopt", "q"] {
        for i in 1..=n {
            write!(out, ",{prefix}_{i}").unwrap();
        }
    }
    out.push_str(",beta,dist_to_bstar");
    if robust {
        for prefix in ["d", "payoff"] {
            for i in 1..=n {
                write!(out, ",{prefix}_{i}").unwrap();
            }
        }
    }
    out.push('\n');

    for rec in &trace.records {
        write!(out, "{}", rec.k).unwrap();
        for v in rec.b.iter().chain(&rec.x_opt).chain(&rec.q) {
            write!(out, ",{}", format_sig(*v)).unwrap();
        }
        write!(out, ",{},", format_sig(rec.beta)).unwrap();
        if let Some(d) = rec.dist_to_bstar {
            out.push_str(&format_sig(d));
        }
        if robust {
            match &rec.disturbance {
                Some(d) => d.iter().for_each(|v| write!(out, ",{}", format_sig(*v)).unwrap()),
                None => (0..n).for_each(|_| out.push(',')),
            }
            for v in &rec.payoff {
                write!(out, ",{}", format_sig(*v)).unwrap();
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    BidsVsK,
    DistVsK,
    PayoffGapVsK,
}

impl PlotKind {
    pub const ALL: [PlotKind; 3] = [PlotKind::BidsVsK, PlotKind::DistVsK, PlotKind::PayoffGapVsK];

    pub fn file_stem(self) -> &'static str {
        match self {
            PlotKind::BidsVsK => "bids_vs_k",
            PlotKind::DistVsK => "dist_vs_k",
            PlotKind::PayoffGapVsK => "payoff_gap_vs_k",
        }
    }
}

/// Columns of a plot: a header and one row per iteration.
fn plot_series(case: &NetworkCase, trace: &MarketTrace, kind: PlotKind) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let n = trace.n_generators();
    let ks = trace.records.iter().map(|r| r.k as f64);
    match kind {
        PlotKind::BidsVsK => {
            let header = std::iter::once("k".to_string()).chain((1..=n).map(|i| format!("b_{i}"))).collect();
            let rows = trace
                .records
                .iter()
                .map(|r| std::iter::once(r.k as f64).chain(r.b.iter().copied()).collect())
                .collect();
            Ok((header, rows))
        }
        PlotKind::DistVsK => {
            let dist = trace
                .distances()
                .ok_or_else(|| Error::Precondition("the equilibrium is not unique; no distances to plot".into()))?;
            Ok((vec!["k".into(), "dist".into()], ks.zip(dist).map(|(k, d)| vec![k, d]).collect()))
        }
        PlotKind::PayoffGapVsK => {
            let gaps: Vec<Vec<f64>> = (0..n)
                .map(|g| trace.payoff_gap(case, g))
                .collect::<Option<_>>()
                .ok_or_else(|| Error::Precondition("the equilibrium is not unique; no payoff gaps to plot".into()))?;
            let header = std::iter::once("k".to_string()).chain((1..=n).map(|i| format!("gap_{i}"))).collect();
            let rows = ks
                .enumerate()
                .map(|(idx, k)| std::iter::once(k).chain(gaps.iter().map(|g| g[idx])).collect())
                .collect();
            Ok((header, rows))
        }
    }
}

/// Writes plot data for `kind` to `path` (CSV) and, with `svg`, a line chart
/// next to it.
pub fn emit_plot_data(case: &NetworkCase, trace: &MarketTrace, kind: PlotKind, path: &Path, svg: bool) -> Result<()> {
    if trace.is_empty() {
        return Err(Error::Precondition("cannot plot an empty trace".into()));
    }
    let (header, rows) = plot_series(case, trace, kind)?;
    let mut csv = header.join(",");
    csv.push('\n');
    for row in &rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, v)| if i == 0 { format!("{}", *v as u64) } else { format_sig(*v) })
            .collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    fs::write(path, csv)?;
    if svg {
        fs::write(path.with_extension("svg"), render_svg(kind.file_stem(), &header, &rows))?;
    }
    Ok(())
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn render_svg(title: &str, header: &[String], rows: &[Vec<f64>]) -> String {
    let (w, h, pad) = (800.0, 480.0, 50.0);
    let x_max = rows.last().map_or(1.0, |r| r[0]).max(1.0);
    let x_min = rows.first().map_or(0.0, |r| r[0]);
    let values = rows.iter().flat_map(|r| r[1..].iter().copied()).filter(|v| v.is_finite());
    let (mut y_min, mut y_max) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !(y_max > y_min) {
        y_min -= 1.0;
        y_max += 1.0;
    }
    let sx = |x: f64| pad + (x - x_min) / (x_max - x_min).max(1e-12) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y_min) / (y_max - y_min) * (h - 2.0 * pad);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{pad}\" y=\"20\">{title}</text>\n\
         <line x1=\"{pad}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{pad}\" y=\"{lb}\">{x_min}</text><text x=\"{r}\" y=\"{lb}\" text-anchor=\"end\">{x_max}</text>\n\
         <text x=\"5\" y=\"{b}\">{y_min:.3}</text><text x=\"5\" y=\"{pad}\">{y_max:.3}</text>\n",
        b = h - pad,
        r = w - pad,
        lb = h - pad + 15.0,
    );
    if y_min < 0.0 && y_max > 0.0 {
        let z = sy(0.0);
        writeln!(svg, "<line x1=\"{pad}\" y1=\"{z}\" x2=\"{}\" y2=\"{z}\" stroke=\"#bbb\" stroke-dasharray=\"4\"/>", w - pad).unwrap();
    }
    // Thin long series so charts stay small.
    let stride = (rows.len() / 2000).max(1);
    for col in 1..header.len() {
        let points: Vec<String> = rows
            .iter()
            .step_by(stride)
            .filter(|r| r[col].is_finite())
            .map(|r| format!("{:.1},{:.1}", sx(r[0]), sy(r[col])))
            .collect();
        let color = PALETTE[(col - 1) % PALETTE.len()];
        writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\" points=\"{}\"/>",
            points.join(" ")
        )
        .unwrap();
        writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>",
            w - pad + 5.0,
            pad + 15.0 * col as f64,
            header[col]
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}
