use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{AuditKind, GateState, IngestEvent, JobEnv, PipelineError};
use crate::clock::millis;
use crate::data::parse_csv;
use crate::model::{
    merge_aggregates, rank_carriers, CarrierAggregate, FlightRecord, MicroBatch, RankingResult,
};
use crate::runtime::Ctx;
use crate::storage::{CounterField, KvItem, QueueMessage, ShuffleEntry};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOutput {
    pub batches_emitted: u64,
    pub records_emitted: u64,
    pub total_rows: u64,
    pub invalid_rows: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapOutput {
    pub entries_written: usize,
    pub rows: u64,
}

/// Downloads one raw file, drops invalid rows, and emits micro-batches. The
/// ingested counter is written once, after the last send.
pub async fn ingest_fn(
    env: Arc<JobEnv>,
    ctx: Ctx,
    event: IngestEvent,
) -> Result<IngestOutput, PipelineError> {
    let cal = &env.calibration;
    let body = env.raw.get(&event.object_key)?;
    ctx.spend(cal.latency.object_get(body.len())).await?;
    ctx.use_memory(cal.ingest_memory_mb(body.len()));

    let parsed = parse_csv(&body)?;
    let (total_rows, invalid_rows) = (parsed.total_rows, parsed.invalid_rows);
    let valid = parsed.into_valid();
    let records = valid.len() as u64;
    let batches = MicroBatch::partition(
        ctx.execution_id(),
        &event.object_key,
        valid,
        env.handlers.batch_size.max(1),
    );

    // work is spread evenly over the sends
    let work = cal.ingest_work(records, ctx.workers(), ctx.vcpus());
    let n = batches.len();
    let mut spent = Duration::ZERO;
    for (i, batch) in batches.iter().enumerate() {
        let target = work.mul_f64((i + 1) as f64 / n as f64);
        ctx.spend(target.saturating_sub(spent)).await?;
        spent = spent.max(target);
        let body = serde_json::to_vec(batch).expect("micro-batch serialises");
        env.queue.send(body, ctx.now());
    }

    if records > 0 {
        ctx.spend(cal.latency.counter_op()).await?;
        env.counters
            .add(ctx.execution_id(), CounterField::Ingested, records)?;
        env.audit
            .record(ctx.now(), AuditKind::IngestCounterWrite { records });
    }
    Ok(IngestOutput {
        batches_emitted: n as u64,
        records_emitted: records,
        total_rows,
        invalid_rows,
    })
}

pub fn decode_batch(message: &QueueMessage) -> Result<MicroBatch, PipelineError> {
    serde_json::from_slice(&message.body).map_err(|e| PipelineError::Decode(e.to_string()))
}

/// Groups the delivered batches by carrier, writes one shuffle entry per
/// carrier, then bumps the mapped counter. A failed attempt removes what it
/// wrote before reporting the error.
pub async fn map_fn(
    env: Arc<JobEnv>,
    ctx: Ctx,
    messages: Vec<QueueMessage>,
) -> Result<MapOutput, PipelineError> {
    let mut records: Vec<FlightRecord> = Vec::new();
    for m in &messages {
        records.extend(decode_batch(m)?.records);
    }
    let batch = MicroBatch {
        execution_id: ctx.execution_id().clone(),
        seq: 0,
        source_file: String::new(),
        records,
    };
    let mut written = Vec::new();
    let result = map_attempt(&env, &ctx, &batch, &mut written).await;
    if result.is_err() && !written.is_empty() {
        let d = env
            .shuffle
            .discard(ctx.execution_id(), ctx.instance_id(), &written);
        if !ctx.timed_out() {
            let _ = ctx.spend(d).await;
        }
    }
    result
}

async fn map_attempt(
    env: &JobEnv,
    ctx: &Ctx,
    batch: &MicroBatch,
    written: &mut Vec<String>,
) -> Result<MapOutput, PipelineError> {
    let cal = &env.calibration;
    ctx.use_memory((cal.map_mem_base_mb + batch.records.len() as f64 * 0.01).ceil() as u32);
    ctx.spend(cal.map_work(batch.records.len())).await?;

    let groups = batch.group_by_carrier();
    let rows: u64 = groups.iter().map(|g| g.count).sum();
    let backoff = Duration::from_millis(env.handlers.map_retry_backoff_ms);
    for agg in &groups {
        let entry = ShuffleEntry::from_aggregate(ctx.execution_id(), ctx.instance_id(), agg);
        let mut retried = false;
        loop {
            let m = env.shuffle.write_entry(&entry, ctx.now());
            if m.value.is_ok() {
                written.push(agg.carrier.clone());
            }
            ctx.spend(m.latency).await?;
            match m.value {
                Ok(()) => break,
                Err(e) if e.is_transient() && !retried => {
                    retried = true;
                    ctx.spend(backoff).await?;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    if env.inject_map_failure() {
        return Err(PipelineError::InjectedMapFailure);
    }
    if env.faults.map_extra_delay_ms > 0 {
        ctx.spend(Duration::from_millis(env.faults.map_extra_delay_ms))
            .await?;
    }
    ctx.spend(cal.latency.counter_op()).await?;
    if rows > 0 {
        let total = env
            .counters
            .add(ctx.execution_id(), CounterField::Mapped, rows)?;
        env.audit
            .record(ctx.now(), AuditKind::MapCounterWrite { rows, total });
    }
    Ok(MapOutput {
        entries_written: groups.len(),
        rows,
    })
}

/// One poll of the job counters.
pub async fn gate_check_fn(
    env: Arc<JobEnv>,
    ctx: Ctx,
    attempts: u32,
) -> Result<GateState, PipelineError> {
    let cal = &env.calibration;
    ctx.use_memory(cal.map_mem_base_mb as u32);
    ctx.spend(millis(cal.gate_check_ms)).await?;
    let c = env.counters.get(ctx.execution_id());
    env.audit.record(
        ctx.now(),
        AuditKind::GateCheck {
            ingested: c.ingested,
            mapped: c.mapped,
        },
    );
    ctx.spend(cal.latency.counter_op()).await?;
    Ok(GateState {
        execution_id: c.id,
        ingested: c.ingested,
        mapped: c.mapped,
        attempts,
        overridden: false,
    })
}

/// Snapshots the partition keys present in shuffle storage.
pub async fn reduce_prep_fn(env: Arc<JobEnv>, ctx: Ctx) -> Result<Vec<String>, PipelineError> {
    let cal = &env.calibration;
    ctx.use_memory(cal.map_mem_base_mb as u32);
    ctx.spend(millis(cal.prep_fixed_ms)).await?;
    let m = env.shuffle.list_partitions(ctx.execution_id());
    ctx.spend(m.latency).await?;
    Ok(m.value?)
}

/// Merges every shuffle entry of one partition and stores the result.
pub async fn reduce_aggregate_fn(
    env: Arc<JobEnv>,
    ctx: Ctx,
    partition: String,
) -> Result<CarrierAggregate, PipelineError> {
    let cal = &env.calibration;
    let eid = ctx.execution_id().clone();
    env.audit.record(
        ctx.now(),
        AuditKind::AggregateRead {
            partition: partition.clone(),
        },
    );
    let m = env.shuffle.read_partition(&eid, &partition);
    ctx.spend(m.latency).await?;
    let entries = m.value?;
    if entries.is_empty() {
        return Err(PipelineError::DegenerateAggregate { partition });
    }
    ctx.use_memory((cal.reduce_mem_base_mb + entries.len() as f64 * 0.002).ceil() as u32);
    ctx.spend(millis(cal.reduce_merge_ms_per_entry * entries.len() as f64))
        .await?;
    let parts: Vec<CarrierAggregate> = entries.iter().map(ShuffleEntry::aggregate).collect();
    let agg = merge_aggregates(&parts)
        .pop()
        .ok_or(PipelineError::DegenerateAggregate {
            partition: partition.clone(),
        })?;

    let bytes = serde_json::to_vec(&agg).map(|v| v.len()).unwrap_or(64);
    ctx.spend(cal.latency.kv_put(bytes)).await?;
    env.results.put(
        KvItem {
            hash_key: eid,
            sort_key: partition.clone(),
            lsi_sort_key: partition,
            payload: agg.clone(),
        },
        ctx.now(),
    )?;
    Ok(agg)
}

/// Ranks all stored aggregates and persists the ranking artifact.
pub async fn reduce_rank_fn(env: Arc<JobEnv>, ctx: Ctx) -> Result<RankingResult, PipelineError> {
    let cal = &env.calibration;
    let items = env.results.query(ctx.execution_id());
    let aggs: Vec<CarrierAggregate> = items.into_iter().map(|i| i.payload).collect();
    let bytes: usize = aggs.iter().map(|a| a.carrier.len() + 40).sum();
    ctx.use_memory(cal.map_mem_base_mb as u32);
    ctx.spend(cal.latency.kv_query(bytes)).await?;
    ctx.spend(millis(cal.rank_ms_per_carrier * aggs.len() as f64))
        .await?;
    let ranking = rank_carriers(&aggs, env.handlers.rank_limit)?;
    let json = ranking.to_json();
    ctx.spend(cal.latency.object_put(json.len())).await?;
    env.artifacts.put(&env.ranking_key(), json.into_bytes())?;
    Ok(ranking)
}
