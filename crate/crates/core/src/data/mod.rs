//! Airline CSV parsing and the seeded synthetic dataset generator.

mod gen;
mod parse;

pub use gen::{
    dataset_files, default_carriers, generate_dataset, generate_file, load_dataset_dir,
    write_dataset_dir, CarrierSpec, CarrierTotals, FileLedger, GenSpec, GeneratedFile, Ledger,
    CSV_HEADER, LEDGER_FILE,
};
pub use parse::{
    parse_csv, parse_csv_with, CsvSchema, ParsedFile, PASSTHROUGH_COLUMNS, REQUIRED_COLUMNS,
};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("missing header row")]
    MissingHeader,
    #[error("missing required column {0}")]
    MissingColumn(&'static str),
    #[error("bad generator spec: {0}")]
    BadSpec(String),
    #[error("bad ledger: {0}")]
    BadLedger(String),
    #[error("storage: {0}")]
    Storage(String),
    #[error("io: {0}")]
    Io(String),
}
