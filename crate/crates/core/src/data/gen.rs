use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::model::{rank_carriers, CarrierAggregate, ModelError, RankingResult};
use crate::storage::ObjectStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarrierSpec {
    pub code: String,
    pub weight: f64,
    pub delay_mean: i64,
    pub delay_sigma: i64,
}

impl CarrierSpec {
    fn new(code: &str, weight: f64, delay_mean: i64, delay_sigma: i64) -> Self {
        CarrierSpec {
            code: code.to_owned(),
            weight,
            delay_mean,
            delay_sigma,
        }
    }
}

pub fn default_carriers() -> Vec<CarrierSpec> {
    vec![
        CarrierSpec::new("AA", 0.125, 6, 24),
        CarrierSpec::new("AS", 0.025, 3, 20),
        CarrierSpec::new("CO", 0.090, 9, 28),
        CarrierSpec::new("DL", 0.150, 5, 22),
        CarrierSpec::new("EA", 0.065, 11, 30),
        CarrierSpec::new("HP", 0.040, 4, 21),
        CarrierSpec::new("NW", 0.090, 7, 26),
        CarrierSpec::new("PA", 0.020, 12, 32),
        CarrierSpec::new("PI", 0.070, 10, 27),
        CarrierSpec::new("PS", 0.005, -2, 15),
        CarrierSpec::new("TW", 0.060, 8, 29),
        CarrierSpec::new("UA", 0.105, 8, 25),
        CarrierSpec::new("US", 0.105, 9, 26),
        CarrierSpec::new("WN", 0.050, 2, 18),
    ]
}

fn default_gen_carriers() -> Vec<CarrierSpec> {
    default_carriers()
}

/// Shape of a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub files: usize,
    pub rows_per_file: usize,
    #[serde(default = "default_gen_carriers")]
    pub carriers: Vec<CarrierSpec>,
    #[serde(default)]
    pub invalid_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl GenSpec {
    pub fn new(files: usize, rows_per_file: usize, seed: u64) -> Self {
        GenSpec {
            files,
            rows_per_file,
            carriers: default_carriers(),
            invalid_fraction: 0.0,
            seed,
        }
    }

    pub fn with_invalid_fraction(mut self, f: f64) -> Self {
        self.invalid_fraction = f;
        self
    }

    pub fn from_toml(text: &str) -> Result<Self, DataError> {
        let spec: GenSpec = toml::from_str(text).map_err(|e| DataError::BadSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::BadSpec(m));
        if self.files == 0 || self.rows_per_file == 0 {
            return bad("files and rows_per_file must be positive".into());
        }
        if !(0.0..1.0).contains(&self.invalid_fraction) {
            return bad(format!(
                "invalid_fraction {} outside [0, 1)",
                self.invalid_fraction
            ));
        }
        if self.carriers.is_empty() {
            return bad("no carriers".into());
        }
        let total: f64 = self.carriers.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("carrier weights sum to {total}, not 1"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.carriers {
            let ok_code = (2..=3).contains(&c.code.len())
                && c.code
                    .bytes()
                    .all(|b| b.is_ascii_uppercase() || b.is_ascii_digit());
            if !ok_code || !seen.insert(c.code.as_str()) {
                return bad(format!("bad or duplicate carrier code {:?}", c.code));
            }
            if c.weight < 0.0 || c.delay_sigma < 0 {
                return bad(format!("carrier {} has negative weight or sigma", c.code));
            }
        }
        Ok(())
    }

    pub fn file_name(index: usize) -> String {
        format!("flights-{index:03}.csv")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CarrierTotals {
    pub delay_sum: i64,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileLedger {
    pub name: String,
    pub rows: u64,
    pub valid: u64,
    pub invalid: u64,
    pub bytes: u64,
}

/// Exact per-carrier totals of the valid rows a generator run wrote.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    pub carriers: BTreeMap<String, CarrierTotals>,
    pub invalid: u64,
    pub total: u64,
    #[serde(default)]
    pub files: Vec<FileLedger>,
}

impl Ledger {
    pub fn valid(&self) -> u64 {
        self.total - self.invalid
    }

    pub fn aggregates(&self) -> Vec<CarrierAggregate> {
        self.carriers
            .iter()
            .filter(|(_, t)| t.count > 0)
            .map(|(c, t)| CarrierAggregate::new(c.clone(), t.delay_sum, t.count))
            .collect()
    }

    pub fn ranking(&self, limit: usize) -> Result<RankingResult, ModelError> {
        rank_carriers(&self.aggregates(), limit)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("ledger serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        serde_json::from_str(text).map_err(|e| DataError::BadLedger(e.to_string()))
    }

    fn absorb(&mut self, file: FileLedger, carriers: BTreeMap<String, CarrierTotals>) {
        for (c, t) in carriers {
            let slot = self.carriers.entry(c).or_default();
            slot.delay_sum += t.delay_sum;
            slot.count += t.count;
        }
        self.invalid += file.invalid;
        self.total += file.rows;
        self.files.push(file);
    }
}

pub const CSV_HEADER: &str = "Year,Quarter,Month,DayofMonth,DayOfWeek,FlightDate,UniqueCarrier,AirlineID,TailNum,FlightNum,\
Origin,OriginAirportID,OriginAirportSeqID,OriginCityMarketID,OriginCityName,OriginState,OriginStateFips,OriginStateName,OriginWac,\
Dest,DestAirportID,DestAirportSeqID,DestCityMarketID,DestCityName,DestState,DestStateFips,DestStateName,DestWac,\
CRSDepTime,DepTime,DepDelay,DepDelayMinutes,DepDel15,TaxiOut,WheelsOff,WheelsOn,TaxiIn,\
CRSArrTime,ArrTime,ArrDelay,ArrDelayMinutes,ArrDel15,Cancelled,CancellationCode,Diverted,\
CRSElapsedTime,ActualElapsedTime,AirTime,Flights,Distance,DistanceGroup,\
CarrierDelay,WeatherDelay,NASDelay,SecurityDelay,LateAircraftDelay,\
FirstDepTime,TotalAddGTime,LongestAddGTime,DivAirportLandings,DivReachedDest,DivActualElapsedTime,DivArrDelay,DivDistance,\
Div1Airport,Div1AirportID,Div1WheelsOn,Div1TotalGTime,Div1LongestGTime,Div1WheelsOff,Div1TailNum,\
Div2Airport,Div2AirportID,Div2WheelsOn,Div2TotalGTime,Div2LongestGTime,Div2WheelsOff,Div2TailNum,\
Div3Airport,Div3AirportID,Div3WheelsOn,Div3TotalGTime,Div3LongestGTime,Div3WheelsOff,Div3TailNum,\
Div4Airport,Div4AirportID,Div4WheelsOn,Div4TotalGTime,Div4LongestGTime,Div4WheelsOff,Div4TailNum,\
Div5Airport,Div5AirportID,Div5WheelsOn,Div5TotalGTime,Div5LongestGTime,Div5WheelsOff,Div5TailNum";

// 7 per diversion slot, 5 slots, plus 8 summary columns, all empty
const EMPTY_TAIL: usize = 43;

// code, city, state, state name, (x, y) for distances
const AIRPORTS: [(&str, &str, &str, &str, f64, f64); 12] = [
    ("ATL", "Atlanta, GA", "GA", "Georgia", 84.4, 33.6),
    ("BOS", "Boston, MA", "MA", "Massachusetts", 71.0, 42.4),
    ("DEN", "Denver, CO", "CO", "Colorado", 104.7, 39.9),
    ("DFW", "Dallas/Fort Worth, TX", "TX", "Texas", 97.0, 32.9),
    ("JFK", "New York, NY", "NY", "New York", 73.8, 40.6),
    ("LAX", "Los Angeles, CA", "CA", "California", 118.4, 33.9),
    ("MIA", "Miami, FL", "FL", "Florida", 80.3, 25.8),
    ("ORD", "Chicago, IL", "IL", "Illinois", 87.9, 42.0),
    ("PHX", "Phoenix, AZ", "AZ", "Arizona", 112.0, 33.4),
    ("SEA", "Seattle, WA", "WA", "Washington", 122.3, 47.4),
    ("SFO", "San Francisco, CA", "CA", "California", 122.4, 37.6),
    ("STL", "St. Louis, MO", "MO", "Missouri", 90.4, 38.7),
];

/// Splits `total` across `weights` by largest remainder; ties go to the
/// earlier entry.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut rest = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for i in order {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

// AirportID, AirportSeqID, CityMarketID
fn airport_ids(i: usize) -> String {
    let id = 10_135 + 397 * i;
    format!("{id},{id}02,{}", 30_000 + 211 * i)
}

fn hhmm(minutes: i64) -> String {
    let m = minutes.rem_euclid(24 * 60);
    format!("{:02}{:02}", m / 60, m % 60)
}

fn quote(s: &str) -> String {
    if s.contains(',') {
        format!("\"{s}\"")
    } else {
        s.to_owned()
    }
}

/// One generated CSV file and its exact ledger.
pub struct GeneratedFile {
    pub name: String,
    pub bytes: Vec<u8>,
    pub ledger: FileLedger,
    pub carriers: BTreeMap<String, CarrierTotals>,
}

/// Writes file `index` of `spec`. Rows are grouped by carrier in code order,
/// the way monthly airline extracts are laid out.
pub fn generate_file(spec: &GenSpec, index: usize) -> Result<GeneratedFile, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(
        spec.seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15),
    );
    let rows = spec.rows_per_file;
    let mut carriers: Vec<&CarrierSpec> = spec.carriers.iter().collect();
    carriers.sort_by(|a, b| a.code.cmp(&b.code));
    let counts = apportion(rows, &carriers.iter().map(|c| c.weight).collect::<Vec<_>>());

    let n_invalid = (spec.invalid_fraction * rows as f64).round() as usize;
    let mut invalid = vec![false; rows];
    for i in sample(&mut rng, rows, n_invalid.min(rows)) {
        invalid[i] = true;
    }

    let year = 1988 + (index / 12) as i64;
    let month = (index % 12) as i64 + 1;
    let mut out = Vec::with_capacity(rows * 330 + CSV_HEADER.len() + 1);
    out.extend_from_slice(CSV_HEADER.as_bytes());
    out.push(b'\n');
    let tail = ",".repeat(EMPTY_TAIL);
    let mut totals: BTreeMap<String, CarrierTotals> = BTreeMap::new();
    let mut row = 0usize;
    for (carrier, &n) in carriers.iter().zip(&counts) {
        let dist = Normal::new(carrier.delay_mean as f64, carrier.delay_sigma.max(0) as f64)
            .map_err(|e| DataError::BadSpec(e.to_string()))?;
        let airline_id = 19_000 + carrier.code.bytes().map(u32::from).sum::<u32>();
        for _ in 0..n {
            let bad = invalid[row];
            row += 1;
            let day = rng.random_range(1..=28i64);
            let (oi, di) = loop {
                let o = rng.random_range(0..AIRPORTS.len());
                let d = rng.random_range(0..AIRPORTS.len());
                if o != d {
                    break (o, d);
                }
            };
            let (o, d) = (AIRPORTS[oi], AIRPORTS[di]);
            let distance = (((o.4 - d.4) * 53.0).powi(2) + ((o.5 - d.5) * 69.0).powi(2))
                .sqrt()
                .round();
            let elapsed = (distance / 7.5 + 35.0).round() as i64;
            let crs_dep = rng.random_range(6 * 60..22 * 60i64);
            let crs_arr = crs_dep + elapsed;
            let delay = (dist.sample(&mut rng).round() as i64).clamp(-60, 900);
            let dep_delay = delay + rng.random_range(-6..=6i64);
            let taxi_out = rng.random_range(8..30i64);
            let taxi_in = rng.random_range(3..15i64);
            let flight_num = rng.random_range(1..3000u32);
            let tail_num = format!("N{}{}", rng.random_range(100..999u32), &carrier.code[..2]);
            let dep = crs_dep + dep_delay;
            let cancelled = bad && rng.random_bool(0.6);
            let diverted = bad && !cancelled;
            let (arr_time, arr_delay, arr_min, arr15) = if bad {
                (String::new(), String::new(), String::new(), String::new())
            } else {
                (
                    hhmm(crs_arr + delay),
                    format!("{delay}.00"),
                    format!("{}.00", delay.max(0)),
                    format!("{}.00", u8::from(delay >= 15)),
                )
            };
            writeln!(
                out,
                "{year},{q},{month},{day},{dow},{year}-{month:02}-{day:02},{code},{airline_id},{tail_num},{flight_num},\
{oc},{oids},{ocity},{ost},{ofips},{ostn},{owac},{dc},{dids},{dcity},{dst},{dfips},{dstn},{dwac},\
{crs_dep_s},{dep_s},{dep_delay}.00,{dep_min}.00,{dep15}.00,{taxi_out}.00,{woff},{won},{taxi_in}.00,\
{crs_arr_s},{arr_time},{arr_delay},{arr_min},{arr15},{canc}.00,{ccode},{div}.00,\
{elapsed}.00,{actual},{air},1.00,{distance}.00,{dgroup},,,,,{tail}",
                q = (month - 1) / 3 + 1,
                dow = (day + month) % 7 + 1,
                code = carrier.code,
                oc = o.0,
                ocity = quote(o.1),
                ost = o.2,
                oids = airport_ids(oi),
                ofips = 10 + 3 * oi,
                ostn = o.3,
                owac = 20 + 7 * oi,
                dc = d.0,
                dcity = quote(d.1),
                dst = d.2,
                dids = airport_ids(di),
                dfips = 10 + 3 * di,
                dstn = d.3,
                dwac = 20 + 7 * di,
                crs_dep_s = hhmm(crs_dep),
                dep_s = if cancelled { String::new() } else { hhmm(dep) },
                dep_min = dep_delay.max(0),
                dep15 = u8::from(dep_delay >= 15),
                woff = hhmm(dep + taxi_out),
                won = hhmm(dep + elapsed - taxi_in),
                crs_arr_s = hhmm(crs_arr),
                canc = u8::from(cancelled),
                ccode = if cancelled { ["A", "B", "C"][rng.random_range(0..3)] } else { "" },
                div = u8::from(diverted),
                actual = if bad { String::new() } else { format!("{}.00", elapsed + delay - dep_delay) },
                air = if bad { String::new() } else { format!("{}.00", elapsed - taxi_in - taxi_out) },
                dgroup = (distance as i64 / 250 + 1).min(11),
            )
            .expect("writing to a Vec cannot fail");
            if !bad {
                let t = totals.entry(carrier.code.clone()).or_default();
                t.delay_sum += delay;
                t.count += 1;
            }
        }
    }
    let name = GenSpec::file_name(index);
    let ledger = FileLedger {
        name: name.clone(),
        rows: rows as u64,
        valid: (rows - n_invalid) as u64,
        invalid: n_invalid as u64,
        bytes: out.len() as u64,
    };
    Ok(GeneratedFile {
        name,
        bytes: out,
        ledger,
        carriers: totals,
    })
}

/// Generates every file of `spec` into `sink` under its file name.
pub fn generate_dataset(spec: &GenSpec, sink: &ObjectStore) -> Result<Ledger, DataError> {
    let mut ledger = Ledger::default();
    for i in 0..spec.files {
        let f = generate_file(spec, i)?;
        sink.put(&f.name, f.bytes)
            .map_err(|e| DataError::Storage(e.to_string()))?;
        ledger.absorb(f.ledger, f.carriers);
    }
    Ok(ledger)
}

pub const LEDGER_FILE: &str = "ledger.json";

/// Generates `spec` into a directory: one CSV per file plus the ledger.
pub fn write_dataset_dir(spec: &GenSpec, dir: &Path) -> Result<Ledger, DataError> {
    let io = |p: &Path, e: std::io::Error| DataError::Io(format!("{}: {e}", p.display()));
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut ledger = Ledger::default();
    for i in 0..spec.files {
        let f = generate_file(spec, i)?;
        let path = dir.join(&f.name);
        std::fs::write(&path, &f.bytes).map_err(|e| io(&path, e))?;
        ledger.absorb(f.ledger, f.carriers);
    }
    let path = dir.join(LEDGER_FILE);
    std::fs::write(&path, ledger.to_json()).map_err(|e| io(&path, e))?;
    Ok(ledger)
}

/// CSV files in `dir`, sorted by name.
pub fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let rd =
        std::fs::read_dir(dir).map_err(|e| DataError::Io(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every CSV in `dir` into `store` keyed by file name; returns the keys.
pub fn load_dataset_dir(dir: &Path, store: &ObjectStore) -> Result<Vec<String>, DataError> {
    let mut keys = Vec::new();
    for path in dataset_files(dir)? {
        let bytes =
            std::fs::read(&path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
        let key = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_owned();
        store
            .put(&key, bytes)
            .map_err(|e| DataError::Storage(e.to_string()))?;
        keys.push(key);
    }
    Ok(keys)
}
