//! Domain types and the on-time-performance query.
//!
//! The query is `SELECT carrier, sum(delay)/count(*) GROUP BY carrier ORDER BY 2 ASC`,
//! limited to the best `limit` carriers. Everything in here is an immutable value
//! once built and can be shared freely between simulated invocations.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("malformed execution id {0:?}: expected a lowercase 8-4-4-4-12 hex uuid")]
    MalformedExecutionId(String),
    #[error("aggregate for carrier {carrier:?} has count 0")]
    DegenerateAggregate { carrier: String },
    #[error("ranking limit must be at least 1")]
    ZeroLimit,
}

/// Identity of one job run, threaded through every phase.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ExecutionId(String);

impl ExecutionId {
    pub fn parse(s: &str) -> Result<Self, ModelError> {
        if is_lower_uuid(s) {
            Ok(ExecutionId(s.to_owned()))
        } else {
            Err(ModelError::MalformedExecutionId(s.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn from_uuid(u: Uuid) -> Self {
        ExecutionId(u.hyphenated().to_string())
    }
}

impl fmt::Display for ExecutionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for ExecutionId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExecutionId::parse(s)
    }
}

impl TryFrom<String> for ExecutionId {
    type Error = ModelError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        if is_lower_uuid(&s) {
            Ok(ExecutionId(s))
        } else {
            Err(ModelError::MalformedExecutionId(s))
        }
    }
}

impl From<ExecutionId> for String {
    fn from(id: ExecutionId) -> String {
        id.0
    }
}

/// `^[0-9a-f]{8}(-[0-9a-f]{4}){3}-[0-9a-f]{12}$`
pub fn is_lower_uuid(s: &str) -> bool {
    const GROUPS: [usize; 5] = [8, 4, 4, 4, 12];
    let mut parts = s.split('-');
    for len in GROUPS {
        match parts.next() {
            Some(p)
                if p.len() == len && p.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) => {}
            _ => return false,
        }
    }
    parts.next().is_none()
}

/// Source of execution and instance ids.
///
/// The seeded form yields a reproducible sequence, which is what makes whole
/// runs byte-for-byte repeatable.
pub struct IdGenerator {
    rng: ChaCha8Rng,
}

impl IdGenerator {
    pub fn seeded(seed: u64) -> Self {
        IdGenerator {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn from_entropy() -> Self {
        IdGenerator {
            rng: ChaCha8Rng::from_os_rng(),
        }
    }

    pub fn new_uuid(&mut self) -> Uuid {
        let mut bytes = [0u8; 16];
        self.rng.fill_bytes(&mut bytes);
        uuid::Builder::from_random_bytes(bytes).into_uuid()
    }

    pub fn new_execution_id(&mut self) -> ExecutionId {
        ExecutionId::from_uuid(self.new_uuid())
    }
}

/// A fresh, non-reproducible execution id.
pub fn new_execution_id() -> ExecutionId {
    ExecutionId::from_uuid(Uuid::new_v4())
}

/// One parsed CSV row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlightRecord {
    pub carrier: String,
    /// Arrival delay in whole minutes; `None` when missing or unparsable.
    pub arr_delay_min: Option<i64>,
    pub valid: bool,
    /// Pass-through source columns, comma-joined; never interpreted.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub extra: String,
}

impl FlightRecord {
    pub fn valid(carrier: impl Into<String>, arr_delay_min: i64) -> Self {
        FlightRecord {
            carrier: carrier.into(),
            arr_delay_min: Some(arr_delay_min),
            valid: true,
            extra: String::new(),
        }
    }

    pub fn invalid(carrier: impl Into<String>) -> Self {
        FlightRecord {
            carrier: carrier.into(),
            arr_delay_min: None,
            valid: false,
            extra: String::new(),
        }
    }

    /// The query predicate: a delay is present and the flight was not cancelled.
    pub fn passes_filter(&self) -> bool {
        self.valid && self.arr_delay_min.is_some() && !self.carrier.is_empty()
    }
}

/// An execution-scoped slice of at most `batch_size` records from one file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MicroBatch {
    pub execution_id: ExecutionId,
    pub seq: u64,
    pub source_file: String,
    pub records: Vec<FlightRecord>,
}

impl MicroBatch {
    /// Chops `records` into consecutive batches; only the last one may be short.
    pub fn partition(
        execution_id: &ExecutionId,
        source_file: &str,
        records: Vec<FlightRecord>,
        batch_size: usize,
    ) -> Vec<MicroBatch> {
        assert!(batch_size >= 1, "batch_size must be at least 1");
        let mut out = Vec::with_capacity(records.len().div_ceil(batch_size));
        let mut iter = records.into_iter().peekable();
        let mut seq = 0;
        while iter.peek().is_some() {
            let chunk: Vec<_> = iter.by_ref().take(batch_size).collect();
            out.push(MicroBatch {
                execution_id: execution_id.clone(),
                seq,
                source_file: source_file.to_owned(),
                records: chunk,
            });
            seq += 1;
        }
        out
    }

    /// Per-carrier partial aggregates of the rows that pass the query filter,
    /// in carrier order.
    pub fn group_by_carrier(&self) -> Vec<CarrierAggregate> {
        let mut groups: BTreeMap<&str, (i64, u64)> = BTreeMap::new();
        for r in self.records.iter().filter(|r| r.passes_filter()) {
            let slot = groups.entry(r.carrier.as_str()).or_default();
            slot.0 += r.arr_delay_min.unwrap_or_default();
            slot.1 += 1;
        }
        groups
            .into_iter()
            .map(|(carrier, (delay_sum, count))| CarrierAggregate {
                carrier: carrier.to_owned(),
                delay_sum,
                count,
            })
            .collect()
    }
}

/// The `{id, ingested, mapped}` triple that gates the reduce phase.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobCounters {
    pub id: ExecutionId,
    pub ingested: u64,
    pub mapped: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CarrierAggregate {
    pub carrier: String,
    pub delay_sum: i64,
    pub count: u64,
}

impl CarrierAggregate {
    pub fn new(carrier: impl Into<String>, delay_sum: i64, count: u64) -> Self {
        CarrierAggregate {
            carrier: carrier.into(),
            delay_sum,
            count,
        }
    }

    pub fn merge(&mut self, other: &CarrierAggregate) {
        debug_assert_eq!(self.carrier, other.carrier);
        self.delay_sum += other.delay_sum;
        self.count += other.count;
    }

    pub fn on_time_performance(&self) -> Result<f64, ModelError> {
        on_time_performance(self)
    }
}

/// Mean arrival delay in minutes. Negative means early on average.
pub fn on_time_performance(agg: &CarrierAggregate) -> Result<f64, ModelError> {
    if agg.count == 0 {
        return Err(ModelError::DegenerateAggregate {
            carrier: agg.carrier.clone(),
        });
    }
    Ok(agg.delay_sum as f64 / agg.count as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedCarrier {
    pub carrier: String,
    pub on_time_performance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub entries: Vec<RankedCarrier>,
    pub limit: usize,
}

impl RankingResult {
    pub fn carriers(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.carrier.as_str()).collect()
    }

    /// The frozen ranking artifact: a JSON list of `{carrier, on_time_performance}`.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.entries).expect("ranking serialises");
        s.push('\n');
        s
    }
}

pub const DEFAULT_RANK_LIMIT: usize = 10;

/// Ascending by mean delay, ties broken by carrier code, truncated to `limit`.
///
/// Aggregates with a zero count carry no information and are skipped.
pub fn rank_carriers(aggs: &[CarrierAggregate], limit: usize) -> Result<RankingResult, ModelError> {
    if limit == 0 {
        return Err(ModelError::ZeroLimit);
    }
    let mut scored: Vec<RankedCarrier> = aggs
        .iter()
        .filter_map(|a| {
            a.on_time_performance().ok().map(|p| RankedCarrier {
                carrier: a.carrier.clone(),
                on_time_performance: p,
            })
        })
        .collect();
    scored.sort_by(compare_ranked);
    scored.truncate(limit);
    Ok(RankingResult {
        entries: scored,
        limit,
    })
}

fn compare_ranked(a: &RankedCarrier, b: &RankedCarrier) -> Ordering {
    a.on_time_performance
        .total_cmp(&b.on_time_performance)
        .then_with(|| a.carrier.cmp(&b.carrier))
}

/// Folds partial aggregates into one aggregate per carrier.
pub fn merge_aggregates<'a>(
    parts: impl IntoIterator<Item = &'a CarrierAggregate>,
) -> Vec<CarrierAggregate> {
    let mut merged: BTreeMap<String, CarrierAggregate> = BTreeMap::new();
    for p in parts {
        merged
            .entry(p.carrier.clone())
            .and_modify(|m| m.merge(p))
            .or_insert_with(|| p.clone());
    }
    merged.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn agg(c: &str, s: i64, n: u64) -> CarrierAggregate {
        CarrierAggregate::new(c, s, n)
    }

    #[test]
    fn seeded_ids_are_distinct_reproducible_and_well_formed() {
        let mut g = IdGenerator::seeded(42);
        let (u1, u2) = (g.new_execution_id(), g.new_execution_id());
        assert_ne!(u1, u2);
        let mut again = IdGenerator::seeded(42);
        assert_eq!(
            (again.new_execution_id(), again.new_execution_id()),
            (u1.clone(), u2)
        );
        assert!(is_lower_uuid(u1.as_str()));
        assert_eq!(u1.as_str().len(), 36);
    }

    #[test]
    fn execution_id_rejects_uppercase_and_short() {
        assert!(ExecutionId::parse("A3C9E821-8260-4950-806D-65F7D2E8E989").is_err());
        assert!(ExecutionId::parse("a3c9e821-8260-4950-806d").is_err());
        assert!(ExecutionId::parse("a3c9e821-8260-4950-806d-65f7d2e8e989").is_ok());
        assert!(ExecutionId::parse("a3c9e821-8260-4950-806d-65f7d2e8e989-00").is_err());
    }

    #[test]
    fn fresh_ids_differ() {
        assert_ne!(new_execution_id(), new_execution_id());
    }

    #[test]
    fn on_time_performance_examples() {
        assert_eq!(on_time_performance(&agg("AA", 0, 7)), Ok(0.0));
        assert_eq!(on_time_performance(&agg("AA", -30, 10)), Ok(-3.0));
        assert!(matches!(
            on_time_performance(&agg("AA", 5, 0)),
            Err(ModelError::DegenerateAggregate { .. })
        ));
    }

    #[test]
    fn on_time_performance_matches_raw_row_mean() {
        let delays = [5i64, -5, 10, 0];
        let records: Vec<_> = delays
            .iter()
            .map(|d| FlightRecord::valid("ZZ", *d))
            .collect();
        let eid = IdGenerator::seeded(1).new_execution_id();
        let batch = &MicroBatch::partition(&eid, "f", records, 100)[0];
        let grouped = batch.group_by_carrier();
        // oracle: plain mean over the raw rows
        let oracle = delays.iter().sum::<i64>() as f64 / delays.len() as f64;
        assert_eq!(grouped[0].on_time_performance().unwrap(), oracle);
        assert_eq!(oracle, 2.5);
    }

    #[test]
    fn rank_examples() {
        assert!(rank_carriers(&[], 10).unwrap().entries.is_empty());
        let r = rank_carriers(
            &[agg("AA", 10, 10), agg("BB", -10, 10), agg("CC", 0, 10)],
            2,
        )
        .unwrap();
        assert_eq!(r.carriers(), vec!["BB", "CC"]);
        assert_eq!(r.entries[0].on_time_performance, -1.0);
        assert_eq!(r.entries[1].on_time_performance, 0.0);
        assert_eq!(
            rank_carriers(&[agg("AA", 1, 1)], 0),
            Err(ModelError::ZeroLimit)
        );
    }

    #[test]
    fn ties_break_on_carrier_code() {
        let r = rank_carriers(&[agg("ZZ", 2, 1), agg("AA", 4, 2), agg("MM", 6, 3)], 10).unwrap();
        assert_eq!(r.carriers(), vec!["AA", "MM", "ZZ"]);
    }

    #[test]
    fn partition_sizes() {
        let eid = IdGenerator::seeded(3).new_execution_id();
        let recs: Vec<_> = (0..250).map(|i| FlightRecord::valid("AA", i)).collect();
        let batches = MicroBatch::partition(&eid, "f.csv", recs, 100);
        let sizes: Vec<_> = batches.iter().map(|b| b.records.len()).collect();
        assert_eq!(sizes, vec![100, 100, 50]);
        assert_eq!(batches[2].seq, 2);
        assert!(MicroBatch::partition(&eid, "f", vec![], 100).is_empty());
    }

    fn arb_aggs() -> impl Strategy<Value = Vec<CarrierAggregate>> {
        proptest::collection::btree_map("[A-Z]{2}", (-5000i64..5000, 1u64..500), 0..20)
            .prop_map(|m| m.into_iter().map(|(c, (s, n))| agg(&c, s, n)).collect())
    }

    proptest! {
        #[test]
        fn ranking_is_sorted_and_order_independent(aggs in arb_aggs(), rot in 0usize..20, limit in 1usize..15) {
            let r = rank_carriers(&aggs, limit).unwrap();
            prop_assert!(r.entries.len() <= limit);
            for w in r.entries.windows(2) {
                prop_assert!(w[0].on_time_performance <= w[1].on_time_performance);
            }
            let mut rotated = aggs.clone();
            if !rotated.is_empty() {
                let k = rot % rotated.len();
                rotated.rotate_left(k);
                rotated.reverse();
            }
            prop_assert_eq!(rank_carriers(&rotated, limit).unwrap(), r);
        }

        #[test]
        fn ranking_is_ratio_invariant(aggs in arb_aggs(), k in 1i64..50) {
            let scaled: Vec<_> = aggs.iter().map(|a| agg(&a.carrier, a.delay_sum * k, a.count * k as u64)).collect();
            let (a, b) = (rank_carriers(&aggs, 10).unwrap(), rank_carriers(&scaled, 10).unwrap());
            prop_assert_eq!(a.carriers(), b.carriers());
        }

        #[test]
        fn partial_sums_merge_to_global(rows in proptest::collection::vec((0usize..6, -60i64..300), 1..600), batch in 1usize..120) {
            const CODES: [&str; 6] = ["AA", "DL", "UA", "WN", "HP", "PS"];
            let eid = IdGenerator::seeded(9).new_execution_id();
            let records: Vec<_> = rows.iter().map(|(c, d)| FlightRecord::valid(CODES[*c], *d)).collect();
            let partials: Vec<CarrierAggregate> = MicroBatch::partition(&eid, "f", records, batch)
                .iter()
                .flat_map(|b| b.group_by_carrier())
                .collect();
            let mut global: BTreeMap<&str, (i64, u64)> = BTreeMap::new();
            for (c, d) in &rows {
                let e = global.entry(CODES[*c]).or_default();
                e.0 += d;
                e.1 += 1;
            }
            let global: Vec<_> = global.into_iter().map(|(c, (s, n))| agg(c, s, n)).collect();
            prop_assert_eq!(merge_aggregates(&partials), global.clone());
            prop_assert_eq!(rank_carriers(&merge_aggregates(&partials), 10).unwrap(), rank_carriers(&global, 10).unwrap());
        }
    }
}
