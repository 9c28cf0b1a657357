use csv::{ByteRecord, ReaderBuilder};

use super::DataError;
use crate::model::FlightRecord;

pub const REQUIRED_COLUMNS: [&str; 3] = ["UniqueCarrier", "ArrDelay", "Cancelled"];
pub const PASSTHROUGH_COLUMNS: [&str; 7] = [
    "Year",
    "Month",
    "DayofMonth",
    "Origin",
    "Dest",
    "CRSArrTime",
    "ArrTime",
];

/// Column positions resolved from a header row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvSchema {
    pub carrier: usize,
    pub arr_delay: usize,
    pub cancelled: usize,
    /// Pass-through columns present in the header, in canonical order.
    pub passthrough: Vec<usize>,
}

impl CsvSchema {
    pub fn resolve<'a>(header: impl IntoIterator<Item = &'a [u8]>) -> Result<Self, DataError> {
        let names: Vec<String> = header
            .into_iter()
            .map(|h| {
                String::from_utf8_lossy(h)
                    .trim()
                    .trim_start_matches('\u{feff}')
                    .to_owned()
            })
            .collect();
        let find = |name: &str| names.iter().position(|n| n == name);
        let need = |name: &'static str| find(name).ok_or(DataError::MissingColumn(name));
        Ok(CsvSchema {
            carrier: need(REQUIRED_COLUMNS[0])?,
            arr_delay: need(REQUIRED_COLUMNS[1])?,
            cancelled: need(REQUIRED_COLUMNS[2])?,
            passthrough: PASSTHROUGH_COLUMNS.iter().filter_map(|c| find(c)).collect(),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParsedFile {
    pub records: Vec<FlightRecord>,
    pub total_rows: u64,
    pub valid_rows: u64,
    pub invalid_rows: u64,
}

impl ParsedFile {
    pub fn into_valid(self) -> Vec<FlightRecord> {
        self.records
            .into_iter()
            .filter(FlightRecord::passes_filter)
            .collect()
    }
}

/// Whole minutes. Accepts integral decimals such as `15.00`.
fn parse_minutes(field: &[u8]) -> Option<i64> {
    let s = std::str::from_utf8(field).ok()?.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    let f: f64 = s.parse().ok()?;
    (f.is_finite() && f.fract() == 0.0 && f.abs() < 1e15).then_some(f as i64)
}

fn parse_flag(field: &[u8]) -> Option<bool> {
    match parse_minutes(field)? {
        0 => Some(false),
        1 => Some(true),
        _ => None,
    }
}

fn to_record(schema: &CsvSchema, row: &ByteRecord, keep_extra: bool) -> FlightRecord {
    let text = |i: usize| {
        row.get(i)
            .map(|f| String::from_utf8_lossy(f).trim().to_owned())
    };
    let carrier = text(schema.carrier).unwrap_or_default();
    let delay = row.get(schema.arr_delay).and_then(parse_minutes);
    let cancelled = row.get(schema.cancelled).and_then(parse_flag);
    let valid = !carrier.is_empty() && delay.is_some() && cancelled == Some(false);
    let extra = if keep_extra {
        schema
            .passthrough
            .iter()
            .map(|&i| text(i).unwrap_or_default())
            .collect::<Vec<_>>()
            .join(",")
    } else {
        String::new()
    };
    FlightRecord {
        carrier,
        arr_delay_min: if valid { delay } else { None },
        valid,
        extra,
    }
}

/// Parses an airline CSV. Rows that cannot be read count as invalid; only a
/// missing header or required column fails the file.
pub fn parse_csv(bytes: &[u8]) -> Result<ParsedFile, DataError> {
    parse_csv_with(bytes, true)
}

pub fn parse_csv_with(bytes: &[u8], keep_extra: bool) -> Result<ParsedFile, DataError> {
    let mut reader = ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_reader(bytes);
    let header = reader
        .byte_headers()
        .map_err(|_| DataError::MissingHeader)?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(DataError::MissingHeader);
    }
    let schema = CsvSchema::resolve(header.iter())?;
    let mut out = ParsedFile::default();
    let mut row = ByteRecord::new();
    loop {
        match reader.read_byte_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {
                if row.len() == 1 && row[0].is_empty() {
                    continue;
                }
                let rec = to_record(&schema, &row, keep_extra);
                out.total_rows += 1;
                if rec.valid {
                    out.valid_rows += 1;
                } else {
                    out.invalid_rows += 1;
                }
                out.records.push(rec);
            }
            Err(e) => {
                // a broken row is skipped; an I/O-level failure ends the file
                out.total_rows += 1;
                out.invalid_rows += 1;
                out.records.push(FlightRecord::invalid(""));
                if e.is_io_error() {
                    break;
                }
            }
        }
    }
    Ok(out)
}
