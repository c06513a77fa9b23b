//! Scenario loading and the file-writing runner.

use std::path::{Path, PathBuf};

use aeronet_core::latency::drop_ues;
use aeronet_core::scenario::{
    load_scenario, load_scenario_file, run, ExperimentKind, Outcome, Scenario,
};

fn preset(name: &str) -> Scenario {
    load_scenario_file(
        &Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("presets")
            .join(format!("{name}.json")),
    )
    .unwrap()
}

/// Data rows of a CSV written by the runner, after checking the seed line.
fn rows(path: &Path, seed: u64) -> (String, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), format!("# seed={seed}"));
    let header = lines.next().unwrap().to_string();
    let width = header.split(',').count();
    let data: Vec<Vec<String>> = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    assert!(data.iter().all(|r| r.len() == width), "{}", path.display());
    (header, data)
}

#[test]
fn latency_preset_contents() {
    let sc = preset("paper-latency-6prb");
    let lat = sc.experiment.latency.as_ref().unwrap();
    let net = sc.network().unwrap();
    assert_eq!(net.layout.num_sites(), 19);
    assert_eq!(net.cells.len(), 57);
    assert_eq!(lat.ues_per_cell, 5);
    assert_eq!(lat.prbs, 6);
    assert_eq!(lat.heights_m, vec![1.5, 30.0, 50.0, 100.0, 300.0]);
    assert_eq!(drop_ues(&net, &sc.latency_scenario(lat, 30.0)).len(), 285);
    assert_eq!(
        preset("paper-latency-15prb")
            .experiment
            .latency
            .unwrap()
            .prbs,
        15
    );
}

#[test]
fn every_preset_round_trips() {
    for name in [
        "paper-latency-6prb",
        "paper-latency-15prb",
        "paper-map-heights",
        "paper-fig7-replica",
        "paper-rlf-heights",
    ] {
        let a = preset(name);
        let b = load_scenario(&a.to_json()).unwrap();
        assert_eq!(a, b, "{name}");
    }
    assert_eq!(
        preset("paper-fig7-replica").kind().unwrap(),
        ExperimentKind::Mobility
    );
}

fn small_map(out: PathBuf) -> Scenario {
    let mut sc = preset("paper-map-heights");
    sc.out_dir = out;
    sc.experiment.map.as_mut().unwrap().grid_points = 40;
    sc
}

#[test]
fn map_outputs_parse() {
    let dir = tempfile::tempdir().unwrap();
    let sc = small_map(dir.path().to_path_buf());
    let report = run(&sc).unwrap();
    assert_eq!(report.summary.len(), 5);
    let (h, data) = rows(&dir.path().join("assoc_map.csv"), 1);
    assert_eq!(
        h,
        "ix,iy,x_m,y_m,height_m,serving_cell,serving_site,rsrp_dbm,rs_sinr_db"
    );
    assert_eq!(data.len(), 5 * 40 * 40);
    assert!(data
        .iter()
        .all(|r| r[5].parse::<usize>().unwrap() < 57 && r[7].parse::<f64>().is_ok()));
    let (_, stats) = rows(&dir.path().join("map_stats.csv"), 1);
    assert_eq!(stats.len(), 5);
    let (h, sites) = rows(&dir.path().join("layout.csv"), 1);
    assert_eq!(h, "site_id,x_m,y_m,z_m");
    assert_eq!(sites.len(), 19);
    assert_eq!(rows(&dir.path().join("cells.csv"), 1).1.len(), 57);
    let pgm = std::fs::read_to_string(dir.path().join("assoc_map_h300.pgm")).unwrap();
    assert!(pgm.starts_with("P2\n"));
    match report.outcome {
        Outcome::Map(m) => assert_eq!(m.len(), 5),
        _ => panic!("expected map outcome"),
    }
}

fn short_latency(out: PathBuf) -> Scenario {
    let mut sc = preset("paper-latency-15prb");
    sc.out_dir = out;
    sc.seed = 4;
    sc.experiment.latency.as_mut().unwrap().duration_ms = 3000;
    sc
}

#[test]
fn latency_summary_is_reproducible_with_one_row_per_height() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(&short_latency(a.path().to_path_buf())).unwrap();
    run(&short_latency(b.path().to_path_buf())).unwrap();
    let fa = std::fs::read(a.path().join("summary.csv")).unwrap();
    let fb = std::fs::read(b.path().join("summary.csv")).unwrap();
    assert_eq!(fa, fb);
    let (h, data) = rows(&a.path().join("summary.csv"), 4);
    assert_eq!(
        h,
        "height_m,prbs,utilization,frac_within_50ms,p50_ms,p95_ms"
    );
    let heights: Vec<&str> = data.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(heights, ["1.5", "30", "50", "100", "300"]);
    rows(&a.path().join("latency_samples.csv"), 4);
    rows(&a.path().join("sinr_samples.csv"), 4);
}

#[test]
fn center_only_restricts_latency_samples() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = short_latency(dir.path().to_path_buf());
    let lat = sc.experiment.latency.as_mut().unwrap();
    lat.center_only = true;
    lat.heights_m = vec![50.0];
    run(&sc).unwrap();
    let (_, data) = rows(&dir.path().join("latency_samples.csv"), 4);
    assert!(!data.is_empty());
    assert!(data.iter().all(|r| r[2].parse::<usize>().unwrap() < 3));
}

#[test]
fn mobility_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = preset("paper-fig7-replica");
    sc.out_dir = dir.path().to_path_buf();
    run(&sc).unwrap();
    let (h, trace) = rows(&dir.path().join("trace.csv"), 1);
    assert_eq!(
        h,
        "height_m,route_id,t_ms,cell_id,rsrp_filtered_dbm,serving,serving_sinr_db"
    );
    assert_eq!(trace.len() % 57, 0);
    let (_, events) = rows(&dir.path().join("events.csv"), 1);
    assert!(events.iter().any(|r| r[3] == "RlfDeclared"));
    let (h, summary) = rows(&dir.path().join("mobility_summary.csv"), 1);
    assert_eq!(h, "height_m,routes,handovers,rlfs,rlf_per_km");
    assert_eq!(summary.len(), 1);
}

#[test]
fn engine_errors_surface() {
    let mut sc = small_map(PathBuf::from("unused"));
    sc.experiment.map.as_mut().unwrap().grid_points = 1;
    let e = run(&sc).unwrap_err().to_string();
    assert!(e.contains("grid_points"), "{e}");
}
