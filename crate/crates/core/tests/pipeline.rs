use rdmatch::io::write_economy;
use rdmatch::mechanism::run_da;
use rdmatch::pipeline::{report, run_pipeline, write_artifacts, RunConfig, Stage, Status};
use rdmatch::presets::golden_sd_economy;

#[test]
fn files_source_matches_packaged_economy() {
    let dir = tempfile::tempdir().unwrap();
    let e = golden_sd_economy();
    write_economy(&dir.path().join("data"), &e, Some(&run_da(&e).unwrap())).unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(
        &cfg_path,
        "regimes = [\"spo_umas\"]\n\n[source]\nkind = \"files\"\ndir = \"data\"\nlist_cap = 3\n",
    )
    .unwrap();
    let cfg = RunConfig::load(&cfg_path).unwrap();
    let from_files = run_pipeline(&cfg).unwrap();
    let packaged = run_pipeline(&RunConfig::preset("golden-sd").unwrap()).unwrap();
    assert_eq!(from_files.market.cutoffs, packaged.market.cutoffs);
    assert_eq!(from_files.bounds, packaged.bounds);
    assert!(from_files.manifest.inputs.iter().any(|(name, _)| name == "schools.csv"));
}

#[test]
fn report_rebuilds_tables_from_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = run_pipeline(&RunConfig::preset("golden-sd").unwrap()).unwrap();
    write_artifacts(dir.path(), &mut run, Stage::Bounds).unwrap();
    let written = std::fs::read(dir.path().join("report.csv")).unwrap();
    let intervals = std::fs::read(dir.path().join("intervals.csv")).unwrap();
    assert_eq!(report(dir.path()).unwrap(), written);
    assert_eq!(std::fs::read(dir.path().join("intervals.csv")).unwrap(), intervals);

    // One line per bounds record plus the header, and the per-group counts
    // add up to the record count.
    let text = String::from_utf8(intervals).unwrap();
    assert_eq!(text.lines().count(), run.bounds.len() + 1);
    let mut rdr = csv::Reader::from_reader(written.as_slice());
    let total: usize = rdr.records().map(|r| r.unwrap()[3].parse::<usize>().unwrap()).sum();
    assert_eq!(total, run.bounds.len());
}

#[test]
fn report_needs_bounds_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = run_pipeline(&RunConfig::preset("golden-sd").unwrap()).unwrap();
    write_artifacts(dir.path(), &mut run, Stage::Identify).unwrap();
    assert!(report(dir.path()).is_err());
}

#[test]
fn rigged_market_is_flagged() {
    let run = run_pipeline(&RunConfig::preset("rigged").unwrap()).unwrap();
    assert!(run.falsified());
    assert!(run.manifest.falsified);
    assert!(run.bounds.iter().any(|b| b.status == Status::Falsified));
}

#[test]
fn bad_configs_are_rejected() {
    assert!(RunConfig::from_toml("threads = 1\nbogus = 2\n").is_err());
    assert!(RunConfig::from_toml("regimes = []\n").and_then(|c| c.validate()).is_err());
    assert!(RunConfig::from_toml("[source]\nkind = \"preset\"\nname = \"nope\"\n")
        .and_then(|c| c.validate())
        .is_err());
    assert!(RunConfig::preset("nope").is_err());
}
