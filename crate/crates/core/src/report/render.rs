use std::str::FromStr;

use super::{ConcurrencyPoint, CostReport, FunctionKpi, ReportError};
use crate::workflow::PhaseBreakdown;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Text,
    Csv,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Text => "txt",
            Format::Csv => "csv",
        }
    }
}

impl FromStr for Format {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" | "txt" => Ok(Format::Text),
            "csv" => Ok(Format::Csv),
            _ => Err(ReportError::UnknownFormat(s.to_owned())),
        }
    }
}

pub const KPI_HEADER: [&str; 6] = [
    "Function",
    "Total Count",
    "Init Count",
    "Avg Init (ms)",
    "Avg Duration (ms)",
    "% Init",
];

pub const PHASE_HEADER: [&str; 8] = [
    "Scenario",
    "Ingest (s)",
    "ReducePrep (s)",
    "ReduceGate (s)",
    "ReduceAggregate (s)",
    "ReduceRank (s)",
    "Overhead (s)",
    "Total (s)",
];

pub const PERCENT_HEADER: [&str; 7] = [
    "Scenario",
    "Ingest (%)",
    "ReducePrep (%)",
    "ReduceGate (%)",
    "ReduceAggregate (%)",
    "ReduceRank (%)",
    "Overhead (%)",
];

fn table(header: &[&str], rows: &[Vec<String>], format: Format) -> String {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(header).expect("in-memory csv");
            for r in rows {
                w.write_record(r).expect("in-memory csv");
            }
            String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
        }
        Format::Text => {
            let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
            for r in rows {
                for (w, c) in widths.iter_mut().zip(r) {
                    *w = (*w).max(c.len());
                }
            }
            let line = |cells: Vec<&str>| {
                let mut s = String::new();
                for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
                    if i == 0 {
                        s.push_str(&format!("{c:<w$}"));
                    } else {
                        s.push_str(&format!("  {c:>w$}"));
                    }
                }
                s.push('\n');
                s
            };
            let mut out = line(header.to_vec());
            for r in rows {
                out.push_str(&line(r.iter().map(String::as_str).collect()));
            }
            out
        }
    }
}

pub fn render_kpi(rows: &[FunctionKpi], format: Format) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|k| {
            vec![
                k.function.clone(),
                k.total_count.to_string(),
                k.init_count.to_string(),
                format!("{:.0}", k.avg_init_ms),
                format!("{:.0}", k.avg_duration_ms),
                format!("{:.2}", k.pct_init),
            ]
        })
        .collect();
    table(&KPI_HEADER, &body, format)
}

/// Phase seconds, one row per scenario.
pub fn render_phases(rows: &[(String, PhaseBreakdown)], format: Format) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, p)| {
            let mut r = vec![name.clone()];
            r.extend(p.seconds().iter().map(|s| format!("{s:.2}")));
            r.push(format!("{:.2}", p.total));
            r
        })
        .collect();
    table(&PHASE_HEADER, &body, format)
}

/// Phase shares of the total, one row per scenario.
pub fn render_percentages(rows: &[(String, PhaseBreakdown)], format: Format) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, p)| {
            let mut r = vec![name.clone()];
            r.extend(p.percentages().iter().map(|s| format!("{s:.1}")));
            r
        })
        .collect();
    table(&PERCENT_HEADER, &body, format)
}

pub fn render_cost(report: &CostReport, format: Format) -> String {
    let header = [
        "Function",
        "Invocations",
        "Billed GB-s",
        "Compute Cost",
        "Request Cost",
    ];
    let mut body: Vec<Vec<String>> = report
        .functions
        .iter()
        .map(|f| {
            vec![
                f.function.clone(),
                f.invocations.to_string(),
                format!("{:.3}", f.billed_gb_s),
                format!("{:.8}", f.compute_cost),
                format!("{:.8}", f.request_cost),
            ]
        })
        .collect();
    body.push(vec![
        "total".into(),
        report
            .functions
            .iter()
            .map(|f| f.invocations)
            .sum::<u64>()
            .to_string(),
        format!(
            "{:.3}",
            report.functions.iter().map(|f| f.billed_gb_s).sum::<f64>()
        ),
        String::new(),
        format!("{:.8}", report.total),
    ]);
    let rates = format!(
        "rates: {} {} per GB-s, {} {} per request",
        report.rates.price_per_gb_s,
        report.rates.currency,
        report.rates.request_price,
        report.rates.currency
    );
    match format {
        Format::Text => format!("{rates}\n{}", table(&header, &body, format)),
        Format::Csv => {
            let mut header = header.to_vec();
            header.extend(["Price per GB-s", "Request Price", "Currency"]);
            let extra = [
                report.rates.price_per_gb_s.to_string(),
                report.rates.request_price.to_string(),
                report.rates.currency.clone(),
            ];
            for r in &mut body {
                r.extend(extra.iter().cloned());
            }
            table(&header, &body, format)
        }
    }
}

pub fn render_concurrency(series: &[ConcurrencyPoint], format: Format) -> String {
    let body: Vec<Vec<String>> = series
        .iter()
        .map(|p| vec![p.second.to_string(), format!("{:.3}", p.active)])
        .collect();
    table(&["Second", "Concurrency"], &body, format)
}
