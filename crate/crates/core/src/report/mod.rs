//! KPIs over invocation ledgers and traces, rendered in the reference table
//! layouts.

mod render;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use render::{
    render_concurrency, render_cost, render_kpi, render_percentages, render_phases, Format,
    KPI_HEADER, PERCENT_HEADER, PHASE_HEADER,
};

use crate::runtime::InvocationRecord;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("rates must be finite and non-negative")]
    BadRates,
    #[error("unknown format {0:?} (expected text or csv)")]
    UnknownFormat(String),
}

/// Per-function invocation statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionKpi {
    pub function: String,
    pub total_count: u64,
    pub init_count: u64,
    /// Mean init time over cold starts only.
    pub avg_init_ms: f64,
    pub avg_duration_ms: f64,
    pub pct_init: f64,
}

const FUNCTION_ORDER: [&str; 6] = [
    "ingest",
    "map",
    "reduce_prep",
    "reduce_gate",
    "reduce1",
    "reduce2",
];

fn function_rank(name: &str) -> (usize, &str) {
    (
        FUNCTION_ORDER
            .iter()
            .position(|f| *f == name)
            .unwrap_or(FUNCTION_ORDER.len()),
        name,
    )
}

/// Per-function counts and averages, in pipeline order.
pub fn kpi_table(ledger: &[InvocationRecord]) -> Vec<FunctionKpi> {
    #[derive(Default)]
    struct Acc {
        n: u64,
        cold: u64,
        init: f64,
        dur: f64,
    }
    let mut by: BTreeMap<&str, Acc> = BTreeMap::new();
    for r in ledger {
        let a = by.entry(r.function.as_str()).or_default();
        a.n += 1;
        a.dur += r.duration_ms;
        if r.cold_start {
            a.cold += 1;
            a.init += r.init_ms;
        }
    }
    let mut rows: Vec<FunctionKpi> = by
        .into_iter()
        .map(|(f, a)| FunctionKpi {
            function: f.to_owned(),
            total_count: a.n,
            init_count: a.cold,
            avg_init_ms: if a.cold > 0 {
                a.init / a.cold as f64
            } else {
                0.0
            },
            avg_duration_ms: a.dur / a.n as f64,
            pct_init: a.cold as f64 / a.n as f64 * 100.0,
        })
        .collect();
    rows.sort_by(|a, b| function_rank(&a.function).cmp(&function_rank(&b.function)));
    rows
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcurrencyPoint {
    pub second: u64,
    /// Mean number of running handlers during this second.
    pub active: f64,
}

/// Running handlers per virtual second. Summing `active × 1000` over the
/// series gives the total handler duration in ms.
pub fn concurrency_series(ledger: &[InvocationRecord]) -> Vec<ConcurrencyPoint> {
    let mut buckets: BTreeMap<u64, f64> = BTreeMap::new();
    for r in ledger {
        let (mut t, end) = (r.start_ms, r.start_ms + r.duration_ms);
        while t < end {
            let sec = (t / 1000.0).floor();
            let edge = ((sec + 1.0) * 1000.0).min(end);
            *buckets.entry(sec as u64).or_default() += (edge - t) / 1000.0;
            t = edge;
        }
    }
    let Some(&last) = buckets.keys().next_back() else {
        return Vec::new();
    };
    (0..=last)
        .map(|s| ConcurrencyPoint {
            second: s,
            active: buckets.get(&s).copied().unwrap_or(0.0),
        })
        .collect()
}

pub fn peak_concurrency(series: &[ConcurrencyPoint]) -> f64 {
    series.iter().map(|p| p.active).fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostRates {
    pub price_per_gb_s: f64,
    pub request_price: f64,
    pub currency: String,
}

impl Default for CostRates {
    fn default() -> Self {
        CostRates {
            price_per_gb_s: 0.000_016_666_7,
            request_price: 0.000_000_2,
            currency: "USD".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionCost {
    pub function: String,
    pub invocations: u64,
    pub billed_gb_s: f64,
    pub compute_cost: f64,
    pub request_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub rates: CostRates,
    pub functions: Vec<FunctionCost>,
    pub total: f64,
}

pub fn cost_report(
    ledger: &[InvocationRecord],
    rates: &CostRates,
) -> Result<CostReport, ReportError> {
    let ok = |r: f64| r.is_finite() && r >= 0.0;
    if !ok(rates.price_per_gb_s) || !ok(rates.request_price) {
        return Err(ReportError::BadRates);
    }
    let mut by: BTreeMap<&str, (u64, f64)> = BTreeMap::new();
    for r in ledger {
        let e = by.entry(r.function.as_str()).or_default();
        e.0 += 1;
        e.1 += r.billed_gb_ms / 1000.0;
    }
    let mut functions: Vec<FunctionCost> = by
        .into_iter()
        .map(|(f, (n, gb_s))| FunctionCost {
            function: f.to_owned(),
            invocations: n,
            billed_gb_s: gb_s,
            compute_cost: gb_s * rates.price_per_gb_s,
            request_cost: n as f64 * rates.request_price,
        })
        .collect();
    functions.sort_by(|a, b| function_rank(&a.function).cmp(&function_rank(&b.function)));
    let total = functions
        .iter()
        .map(|f| f.compute_cost + f.request_cost)
        .sum();
    Ok(CostReport {
        rates: rates.clone(),
        functions,
        total,
    })
}
