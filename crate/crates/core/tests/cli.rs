use std::fs;
use std::path::Path;
use std::process::Command;

use microreduce::cli::{self, RunArgs, EXIT_STALLED, EXIT_USAGE, SEED_ENV};
use microreduce::data::{write_dataset_dir, GenSpec, Ledger, LEDGER_FILE};
use microreduce::pipeline::FaultConfig;
use microreduce::report::Format;
use microreduce::runtime::write_ledger;
use microreduce::scenario::ScenarioConfig;
use microreduce::workflow::{
    phase_breakdown, ExecutionTrace, PhaseBreakdown, TraceEvent, TraceOutcome, JOB_STATE,
};
use microreduce::{clock::SimTime, model::IdGenerator};

const BIN: &str = env!("CARGO_BIN_EXE_microreduce");

fn bin() -> Command {
    let mut c = Command::new(BIN);
    c.env_remove(SEED_ENV);
    c
}

fn small_scenario(dir: &Path, files: usize, tweak: impl FnOnce(&mut ScenarioConfig)) -> String {
    let mut sc = ScenarioConfig {
        name: "small".into(),
        files,
        ingest_threads: 2,
        ingest_memory_mb: 2048,
        ..ScenarioConfig::default()
    };
    tweak(&mut sc);
    let p = dir.join("scenario.toml");
    fs::write(&p, sc.to_toml()).unwrap();
    p.to_str().unwrap().to_owned()
}

fn only_subdir(dir: &Path) -> std::path::PathBuf {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(v.len(), 1, "{v:?}");
    v.remove(0)
}

#[test]
fn gen_data_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.toml");
    fs::write(&spec, "files = 2\nrows_per_file = 3000\nseed = 4\n").unwrap();
    for out in ["a", "b"] {
        let st = bin()
            .args(["gen-data", "--spec"])
            .arg(&spec)
            .arg("--out")
            .arg(tmp.path().join(out))
            .output()
            .unwrap();
        assert!(st.status.success());
        assert!(String::from_utf8_lossy(&st.stdout).contains(LEDGER_FILE));
    }
    for f in ["flights-000.csv", "flights-001.csv", LEDGER_FILE] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(f)).unwrap(),
            fs::read(tmp.path().join("b").join(f)).unwrap()
        );
    }
    fs::write(&spec, "files = 0\nrows_per_file = 3000\n").unwrap();
    let st = bin()
        .args(["gen-data", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(tmp.path().join("c"))
        .output()
        .unwrap()
        .status;
    assert_eq!(st.code(), Some(1));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    write_dataset_dir(&GenSpec::new(2, 4_000, 21), &tmp.path().join("data")).unwrap();
    let sc = small_scenario(tmp.path(), 2, |_| {});
    let mut dirs = Vec::new();
    for out in ["r1", "r2"] {
        let out = tmp.path().join(out);
        let st = bin()
            .args(["run", "--scenario", &sc, "--seed", "77", "--data"])
            .arg(tmp.path().join("data"))
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap()
            .status;
        assert_eq!(st.code(), Some(0));
        dirs.push(only_subdir(&out));
    }
    for f in [cli::RANKING_FILE, cli::TRACE_FILE, cli::RUN_LEDGER_FILE] {
        assert_eq!(
            fs::read(dirs[0].join(f)).unwrap(),
            fs::read(dirs[1].join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn binary_matches_library_call() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let ledger = write_dataset_dir(&GenSpec::new(1, 5_000, 8), &data).unwrap();
    let sc = small_scenario(tmp.path(), 1, |_| {});
    let out = tmp.path().join("bin");
    let st = bin()
        .args(["run", "--scenario", &sc, "--data"])
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .env(SEED_ENV, "123")
        .output()
        .unwrap()
        .status;
    assert!(st.success());
    let from_bin = only_subdir(&out);

    let lib = cli::run(&RunArgs {
        scenario: sc,
        data,
        out: tmp.path().join("lib"),
        seed: Some(123),
        ..RunArgs::default()
    })
    .unwrap();
    assert_eq!(from_bin.file_name(), lib.dir.file_name());
    let mut ledger_csv = Vec::new();
    write_ledger(&lib.report.ledger, &mut ledger_csv).unwrap();
    assert_eq!(
        fs::read(from_bin.join(cli::RUN_LEDGER_FILE)).unwrap(),
        ledger_csv
    );
    assert_eq!(
        fs::read_to_string(from_bin.join(cli::TRACE_FILE)).unwrap(),
        lib.report.trace.to_csv()
    );
    let ranking = fs::read_to_string(from_bin.join(cli::RANKING_FILE)).unwrap();
    assert_eq!(Some(ranking), lib.report.ranking_json);
    let oracle =
        Ledger::from_json(&fs::read_to_string(tmp.path().join("data").join(LEDGER_FILE)).unwrap())
            .unwrap();
    assert_eq!(oracle, ledger);
    assert_eq!(lib.report.ranking, Some(ledger.ranking(10).unwrap()));
    let cfg = ScenarioConfig::parse(&fs::read_to_string(from_bin.join(cli::CONFIG_FILE)).unwrap())
        .unwrap();
    assert_eq!(cfg.seed, 123);
}

#[test]
fn builtin_scenario_one_completes_with_phase_table() {
    let tmp = tempfile::tempdir().unwrap();
    write_dataset_dir(&GenSpec::new(1, 10_000, 2), &tmp.path().join("data")).unwrap();
    let out = bin()
        .args(["run", "--scenario", "1", "--data"])
        .arg(tmp.path().join("data"))
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ReduceAggregate (s)"));
    let dir = only_subdir(&tmp.path().join("out"));
    let mut reports: Vec<_> = fs::read_dir(dir.join(cli::REPORT_DIR))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    reports.sort();
    assert_eq!(
        reports,
        [
            "cost.csv",
            "cost.txt",
            "kpi.csv",
            "kpi.txt",
            "phases.csv",
            "phases.txt"
        ]
    );
}

#[test]
fn stalled_gate_exits_two_and_override_completes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_dataset_dir(&GenSpec::new(1, 2_000, 3), &data).unwrap();
    let sc = small_scenario(tmp.path(), 1, |s| {
        s.gate_max_attempts = 5;
        s.faults = FaultConfig {
            map_failure_rate: 0.5,
            ..FaultConfig::default()
        };
    });
    let run = |extra: &[&str], out: &str| {
        bin()
            .args(["run", "--scenario", &sc, "--data"])
            .arg(&data)
            .arg("--out")
            .arg(tmp.path().join(out))
            .args(extra)
            .output()
            .unwrap()
    };
    let stalled = run(&[], "a");
    assert_eq!(stalled.status.code(), Some(EXIT_STALLED));
    let err = String::from_utf8_lossy(&stalled.stderr);
    assert!(
        err.contains("ingested=") && err.contains("mapped=") && err.contains("DLQ"),
        "{err}"
    );
    let dir = only_subdir(&tmp.path().join("a"));
    assert!(dir.join(cli::TRACE_FILE).is_file());
    assert!(!dir.join(cli::RANKING_FILE).exists());

    let forced = run(&["--override-gate"], "b");
    assert_eq!(forced.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&forced.stderr).contains("warning"));
}

#[test]
fn report_rebuilds_three_files_and_rejects_unknown_ids() {
    let tmp = tempfile::tempdir().unwrap();
    write_dataset_dir(&GenSpec::new(1, 3_000, 6), &tmp.path().join("data")).unwrap();
    let sc = small_scenario(tmp.path(), 1, |_| {});
    let res = cli::run(&RunArgs {
        scenario: sc,
        data: tmp.path().join("data"),
        out: tmp.path().join("out"),
        ..RunArgs::default()
    })
    .unwrap();
    let eid = res.report.execution_id.to_string();
    fs::remove_dir_all(res.dir.join(cli::REPORT_DIR)).unwrap();
    let st = bin()
        .args(["report", "--exec", &eid, "--format", "csv", "--out"])
        .arg(tmp.path().join("out"))
        .output()
        .unwrap()
        .status;
    assert!(st.success());
    assert_eq!(
        fs::read_dir(res.dir.join(cli::REPORT_DIR)).unwrap().count(),
        3
    );
    let kpi = fs::read_to_string(res.dir.join("report/kpi.csv")).unwrap();
    assert!(
        kpi.starts_with("Function,Total Count,Init Count,Avg Init (ms),Avg Duration (ms),% Init\n")
    );

    let missing = tmp.path().join("empty");
    fs::create_dir(&missing).unwrap();
    let st = bin()
        .args([
            "report",
            "--exec",
            "00000000-0000-4000-8000-00000000abcd",
            "--out",
        ])
        .arg(&missing)
        .output()
        .unwrap()
        .status;
    assert_eq!(st.code(), Some(1));
    assert_eq!(fs::read_dir(&missing).unwrap().count(), 0);

    let st = bin()
        .args(["report", "--exec", &eid])
        .output()
        .unwrap()
        .status;
    assert_eq!(st.code(), Some(EXIT_USAGE));
}

// a hand-written trace shaped like the first reference row
#[test]
fn fixture_trace_gives_reference_percentages() {
    let tmp = tempfile::tempdir().unwrap();
    let eid = IdGenerator::seeded(99).new_execution_id();
    let mut trace = ExecutionTrace::new(eid.clone());
    let ms = |s: f64| SimTime::from_micros((s * 1e6).round() as u64);
    let ev = |t: f64, state: &str, outcome| TraceEvent {
        t: ms(t),
        state: state.into(),
        instance_id: None,
        outcome,
        duration_ms: 0.0,
    };
    let phases = [
        ("ParallelIngest", 92.19),
        ("ReducePrep", 0.84),
        ("ReduceGate", 1.13),
        ("ParallelReduceAggregate", 14.13),
        ("ReduceRank", 0.98),
    ];
    trace.push(ev(0.0, JOB_STATE, TraceOutcome::Started));
    let mut t = 0.0;
    for (state, secs) in phases {
        t += 0.074;
        trace.push(ev(t, state, TraceOutcome::Entered));
        t += secs;
        trace.push(ev(t, state, TraceOutcome::Exited));
    }
    trace.push(ev(109.64, JOB_STATE, TraceOutcome::Completed));
    let dir = tmp.path().join(eid.as_str());
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join(cli::TRACE_FILE), trace.to_csv()).unwrap();
    let mut ledger = Vec::new();
    write_ledger(&[], &mut ledger).unwrap();
    fs::write(dir.join(cli::RUN_LEDGER_FILE), ledger).unwrap();

    cli::report(eid.as_str(), tmp.path(), Format::Csv).unwrap();
    let text = fs::read_to_string(dir.join("report/phases.csv")).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[8..], ["84.1", "0.8", "1.0", "12.9", "0.9", "0.3"]);
    let expect = PhaseBreakdown::from_phases([92.19, 0.84, 1.13, 14.13, 0.98], 109.64).unwrap();
    let got = phase_breakdown(&trace).unwrap();
    for (a, b) in got.percentages().iter().zip(expect.percentages()) {
        assert!((a - b).abs() < 1e-6);
    }
}
