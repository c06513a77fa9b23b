//! Acceptance suite. Runs every criterion in sequence (so timings are not
//! skewed by sibling tests), prints one PASS/FAIL line per criterion and
//! fails at the end if any criterion failed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use aeronet_core::antenna::{composite_gain_db, CompositePattern};
use aeronet_core::channel::{ChannelParams, LinkState};
use aeronet_core::deployment::{build_hex_layout, sectorize, SiteLayout};
use aeronet_core::latency::drop_ues;
use aeronet_core::mobility::escape_shape;
use aeronet_core::radio::{measure_all, rsrq_db, MeasurementSet, Network};
use aeronet_core::scenario::{
    load_scenario_file, run, LatencyRow, MapRun, MobilityRun, Outcome, RunReport, Scenario,
};
use aeronet_core::stats::{derive_stream, percentile};

// Tolerances and budgets.
const BORESIGHT_TOL_DB: f64 = 0.01;
const MIN_SIDELOBES: usize = 7;
const NULL_DEPTH_DB: f64 = 25.0;
const RSRQ_FULL_LOAD_DB: f64 = -10.79;
const RSRQ_TOL_DB: f64 = 0.05;
const GROUND_NON_NEAREST_MAX: f64 = 0.1;
const UTIL_6PRB_300M_MIN: f64 = 0.70;
const UTIL_15PRB_30M_MAX: f64 = 0.25;
const FRAC_15PRB_LOW_MIN: f64 = 0.90;
const FIG7_DROP_DB: f64 = 7.0;
const FIG7_WINDOW_MS: u64 = 4000;
const FIG7_RLF_RANGE_MS: (u64, u64) = (4000, 12_000);
const RLF_RATIO_MIN: f64 = 1.5;
const SINR_GAP_DB: f64 = 4.0;
const WRAP_TOL_M: f64 = 1e-9;

const PRESETS: [&str; 5] = [
    "paper-latency-6prb",
    "paper-latency-15prb",
    "paper-map-heights",
    "paper-fig7-replica",
    "paper-rlf-heights",
];

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn preset_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("presets")
        .join(format!("{name}.json"))
}

/// One preset executed twice: single worker and several workers, each into
/// its own directory.
struct PresetRuns {
    first: RunReport,
    elapsed: Duration,
    dirs: [PathBuf; 2],
}

fn run_with_threads(sc: &Scenario, threads: usize) -> (RunReport, Duration) {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap();
    let t = Instant::now();
    let report = pool.install(|| run(sc)).unwrap();
    (report, t.elapsed())
}

fn run_preset(name: &str, root: &Path) -> PresetRuns {
    let mut sc = load_scenario_file(&preset_path(name)).unwrap();
    let a = root.join(format!("{name}-a"));
    let b = root.join(format!("{name}-b"));
    sc.out_dir = a.clone();
    let (first, elapsed) = run_with_threads(&sc, 1);
    sc.out_dir = b.clone();
    run_with_threads(&sc, 4);
    PresetRuns {
        first,
        elapsed,
        dirs: [a, b],
    }
}

fn map_runs(r: &PresetRuns) -> &[MapRun] {
    match &r.first.outcome {
        Outcome::Map(m) => m,
        _ => panic!("not a map preset"),
    }
}

fn latency_rows(r: &PresetRuns) -> &[LatencyRow] {
    match &r.first.outcome {
        Outcome::Latency(m) => m,
        _ => panic!("not a latency preset"),
    }
}

fn mobility_runs(r: &PresetRuns) -> &[MobilityRun] {
    match &r.first.outcome {
        Outcome::Mobility(m) => m,
        _ => panic!("not a mobility preset"),
    }
}

fn at<T>(items: &[T], h: f64, height: impl Fn(&T) -> f64) -> &T {
    items
        .iter()
        .find(|x| height(x) == h)
        .expect("height present in preset")
}

fn c1_deployment() -> Verdict {
    let t = Instant::now();
    let mut ok = true;
    let mut detail = Vec::new();
    for name in PRESETS {
        let sc = load_scenario_file(&preset_path(name)).unwrap();
        let net = sc.network().unwrap();
        let sites = net.layout.num_sites();
        let cells = net.cells.len();
        ok &= sites == 19 && cells == 57;
        if let Some(lat) = &sc.experiment.latency {
            let ues = drop_ues(&net, &sc.latency_scenario(lat, lat.heights_m[0])).len();
            ok &= ues == 285;
            detail.push(format!("{name}: {sites}/{cells}/{ues}"));
        } else {
            detail.push(format!("{name}: {sites}/{cells}"));
        }
    }
    let el = t.elapsed();
    ok &= el < Duration::from_secs(1);
    Verdict {
        id: 1,
        name: "deployment exactness",
        pass: ok,
        detail: format!("{} ({el:.2?})", detail.join(", ")),
    }
}

fn c2_antenna() -> Verdict {
    let p = CompositePattern::default();
    let tilt = p.array.downtilt_deg;
    let peak = composite_gain_db(0.0, -tilt, &p);
    let expect = p.element.gmax_dbi + 10.0 * (p.array.m_elements as f64).log10();
    // Elevation cut through boresight at 0.01 degree resolution.
    let cut: Vec<f64> = (-9000..=9000)
        .map(|i| composite_gain_db(0.0, i as f64 * 0.01, &p))
        .collect();
    let mut maxima = 0usize;
    let mut deepest = f64::INFINITY;
    for w in cut.windows(3) {
        if w[1] > w[0] && w[1] >= w[2] {
            maxima += 1;
        }
        if w[1] < w[0] && w[1] <= w[2] {
            deepest = deepest.min(w[1]);
        }
    }
    let sidelobes = maxima.saturating_sub(1);
    let mut over = 0;
    let mut s = derive_stream(2, &[2]);
    for _ in 0..10_000 {
        let az = -180.0 + 360.0 * s.uniform();
        let el = -90.0 + 180.0 * s.uniform();
        if composite_gain_db(az, el, &p) > expect + 1e-9 {
            over += 1;
        }
    }
    let pass = (peak - expect).abs() <= BORESIGHT_TOL_DB
        && sidelobes >= MIN_SIDELOBES
        && peak - deepest >= NULL_DEPTH_DB
        && over == 0;
    Verdict {
        id: 2,
        name: "antenna synthesis",
        pass,
        detail: format!(
            "peak {peak:.3} dBi (expect {expect:.3}), {sidelobes} sidelobes, deepest null {:.1} dB below peak, {over} sweep points above peak",
            peak - deepest
        ),
    }
}

fn c3_rsrq() -> Verdict {
    let set = MeasurementSet::from_rsrp(vec![-80.0]).unwrap();
    let r = rsrq_db(&set, &[1.0], 50, -300.0).unwrap();
    // Also through the full radio chain on a one-site network.
    let layout = build_hex_layout(500.0, 0, 25.0).unwrap();
    let cells = sectorize(&layout, [0.0, 120.0, 240.0], 46.0).unwrap();
    let net = Network {
        layout,
        cells: cells[..1].to_vec(),
        pattern: CompositePattern::default(),
        channel: ChannelParams {
            noise_psd_dbm_hz: -300.0,
            ..ChannelParams::default()
        },
    };
    let set = measure_all([100.0, 0.0, 1.5], &net, &[LinkState::CLEAR_LOS]).unwrap();
    let r2 = rsrq_db(&set, &[1.0], 50, net.noise_per_re_dbm()).unwrap();
    Verdict {
        id: 3,
        name: "RSRQ identity",
        pass: (r - RSRQ_FULL_LOAD_DB).abs() <= RSRQ_TOL_DB
            && (r2 - RSRQ_FULL_LOAD_DB).abs() <= RSRQ_TOL_DB,
        detail: format!("{r:.4} dB, {r2:.4} dB via network"),
    }
}

fn c4_fragmentation(r: &PresetRuns) -> Verdict {
    let runs = map_runs(r);
    let pick = |h| at(runs, h, |m| m.map.height_m);
    let (g, m, t) = (pick(1.5), pick(100.0), pick(300.0));
    let nn = [
        g.stats.non_nearest_fraction,
        m.stats.non_nearest_fraction,
        t.stats.non_nearest_fraction,
    ];
    let cc = [
        g.stats.component_count,
        m.stats.component_count,
        t.stats.component_count,
    ];
    let trend = nn[0] < nn[1] && nn[1] < nn[2] && cc[0] < cc[1] && cc[1] < cc[2];
    let ground = nn[0] < GROUND_NON_NEAREST_MAX;
    let fast = r.elapsed < Duration::from_secs(30);
    Verdict {
        id: 4,
        name: "association fragmentation",
        pass: trend && ground && fast,
        detail: format!(
            "non_nearest {:.4}/{:.4}/{:.4}, components {}/{}/{} at 1.5/100/300 m; trend {}, ground<{GROUND_NON_NEAREST_MAX} {} ({:.2?})",
            nn[0],
            nn[1],
            nn[2],
            cc[0],
            cc[1],
            cc[2],
            if trend { "ok" } else { "violated" },
            if ground { "ok" } else { "violated" },
            r.elapsed
        ),
    }
}

fn c5_utilization(r6: &PresetRuns, r15: &PresetRuns) -> Verdict {
    let (a, b) = (latency_rows(r6), latency_rows(r15));
    let u = |rows: &[LatencyRow], h| at(rows, h, |x| x.height_m).utilization;
    let hs = [30.0, 50.0, 100.0, 300.0];
    let nondecr = |rows: &[LatencyRow]| hs.windows(2).all(|w| u(rows, w[0]) <= u(rows, w[1]));
    let part_a = nondecr(a) && nondecr(b);
    let part_b = [50.0, 100.0, 300.0].iter().all(|&h| u(a, h) > u(b, h));
    let part_c = u(a, 300.0) >= UTIL_6PRB_300M_MIN && u(b, 30.0) <= UTIL_15PRB_30M_MAX;
    let fast = r6.elapsed < Duration::from_secs(300) && r15.elapsed < Duration::from_secs(300);
    let fmt = |rows: &[LatencyRow]| {
        rows.iter()
            .map(|x| format!("{:.3}", x.utilization))
            .collect::<Vec<_>>()
            .join("/")
    };
    Verdict {
        id: 5,
        name: "utilization trends",
        pass: part_a && part_b && part_c && fast,
        detail: format!(
            "6 PRB {} | 15 PRB {} (heights 1.5/30/50/100/300); a={part_a} b={part_b} c={part_c} ({:.2?}, {:.2?})",
            fmt(a),
            fmt(b),
            r6.elapsed,
            r15.elapsed
        ),
    }
}

fn c6_latency(r6: &PresetRuns, r15: &PresetRuns) -> Verdict {
    let (a, b) = (latency_rows(r6), latency_rows(r15));
    let f = |rows: &[LatencyRow], h| at(rows, h, |x| x.height_m).frac_within_bound;
    let part_a = b
        .iter()
        .filter(|x| x.height_m <= 100.0)
        .all(|x| x.frac_within_bound >= FRAC_15PRB_LOW_MIN);
    let part_b = f(b, 300.0) < f(b, 100.0);
    let part_c = f(a, 300.0) < f(b, 300.0);
    let fmt = |rows: &[LatencyRow]| {
        rows.iter()
            .map(|x| format!("{:.4}", x.frac_within_bound))
            .collect::<Vec<_>>()
            .join("/")
    };
    Verdict {
        id: 6,
        name: "latency bound trends",
        pass: part_a && part_b && part_c,
        detail: format!(
            "within 50 ms: 6 PRB {} | 15 PRB {}; a={part_a} b={part_b} c={part_c}",
            fmt(a),
            fmt(b)
        ),
    }
}

fn c7_fig7(r: &PresetRuns) -> Verdict {
    let run = &mobility_runs(r)[0];
    let shape = escape_shape(&run.result, 0, FIG7_WINDOW_MS).expect("route selected a cell");
    let rlf_ok = shape
        .rlf_ms
        .is_some_and(|t| (FIG7_RLF_RANGE_MS.0..=FIG7_RLF_RANGE_MS.1).contains(&t));
    let pass = shape.max_drop_db >= FIG7_DROP_DB
        && !shape.report_before_rlf
        && rlf_ok
        && r.elapsed < Duration::from_secs(10);
    Verdict {
        id: 7,
        name: "sidelobe escape replica",
        pass,
        detail: format!(
            "serving cell {} drops {:.2} dB within {} ms, report before RLF: {}, RLF at {:?} ms ({:.2?})",
            shape.first_cell, shape.max_drop_db, FIG7_WINDOW_MS, shape.report_before_rlf, shape.rlf_ms, r.elapsed
        ),
    }
}

fn c8_rlf(r: &PresetRuns) -> Verdict {
    let runs = mobility_runs(r);
    let g = at(runs, 1.5, |m| m.height_m);
    let a = at(runs, 150.0, |m| m.height_m);
    let (ng, na) = (g.result.totals.rlfs, a.result.totals.rlfs);
    let matched = g.routes == 200 && a.routes == 200;
    let ratio = na as f64 / ng.max(1) as f64;
    Verdict {
        id: 8,
        name: "RLF height trend",
        pass: matched && ng > 0 && ratio >= RLF_RATIO_MIN && r.elapsed < Duration::from_secs(120),
        detail: format!(
            "{} routes, RLFs {ng} at 1.5 m vs {na} at 150 m, ratio {ratio:.2} ({:.2?})",
            g.routes, r.elapsed
        ),
    }
}

fn c9_sinr(r: &PresetRuns) -> Verdict {
    let runs = map_runs(r);
    let g = at(runs, 1.5, |m| m.map.height_m).median_rs_sinr_db;
    let a = at(runs, 150.0, |m| m.map.height_m).median_rs_sinr_db;
    Verdict {
        id: 9,
        name: "signal quality height trend",
        pass: g - a >= SINR_GAP_DB && r.elapsed < Duration::from_secs(30),
        detail: format!(
            "median RS-SINR {g:.2} dB at 1.5 m, {a:.2} dB at 150 m, gap {:.2} dB",
            g - a
        ),
    }
}

fn dir_files(d: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(d)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn c10_determinism(all: &[(&str, &PresetRuns)], root: &Path) -> Verdict {
    let mut bad = Vec::new();
    let mut files = 0;
    for (name, r) in all {
        let a = dir_files(&r.dirs[0]);
        let b = dir_files(&r.dirs[1]);
        files += a.len();
        if a != b || a.is_empty() {
            bad.push(name.to_string());
        }
    }
    // A plain rerun with the same worker count as well.
    let mut sc = load_scenario_file(&preset_path("paper-latency-15prb")).unwrap();
    sc.out_dir = root.join("rerun");
    run_with_threads(&sc, 1);
    if dir_files(&sc.out_dir) != dir_files(&all[1].1.dirs[0]) {
        bad.push("paper-latency-15prb rerun".into());
    }
    Verdict {
        id: 10,
        name: "determinism",
        pass: bad.is_empty(),
        detail: if bad.is_empty() {
            format!(
                "{} presets, {files} files byte-identical across 1 and 4 workers",
                all.len()
            )
        } else {
            format!("differences in {}", bad.join(", "))
        },
    }
}

/// Exhaustive selection sort: repeatedly take the strongest remaining cell,
/// lowest id first on ties.
fn oracle_order(p: &[f64]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..p.len()).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut bi = 0;
        for (k, &c) in left.iter().enumerate() {
            let b = left[bi];
            if p[c] > p[b] || (p[c] == p[b] && c < b) {
                bi = k;
            }
        }
        out.push(left.remove(bi));
    }
    out
}

fn brute_wrap_norm(layout: &SiteLayout, p: [f64; 3], q: [f64; 3]) -> f64 {
    // Super-lattice generated by the cluster centre of the first ring of
    // mirror clusters; search a 7x7 patch of translations.
    let isd = layout.isd_m;
    let r = layout_rings(layout) as f64;
    let e1 = [
        isd * 30f64.to_radians().cos(),
        isd * 30f64.to_radians().sin(),
    ];
    let e2 = [0.0, isd];
    let s0 = [
        (2.0 * r + 1.0) * e1[0] - r * e2[0],
        (2.0 * r + 1.0) * e1[1] - r * e2[1],
    ];
    let (sn, cs) = 60f64.to_radians().sin_cos();
    let s1 = [s0[0] * cs - s0[1] * sn, s0[0] * sn + s0[1] * cs];
    let mut best = f64::INFINITY;
    for a in -3..=3 {
        for b in -3..=3 {
            let dx = q[0] + a as f64 * s0[0] + b as f64 * s1[0] - p[0];
            let dy = q[1] + a as f64 * s0[1] + b as f64 * s1[1] - p[1];
            let dz = q[2] - p[2];
            best = best.min((dx * dx + dy * dy + dz * dz).sqrt());
        }
    }
    best
}

fn layout_rings(l: &SiteLayout) -> u32 {
    (0..10)
        .find(|&r| 1 + 3 * r * (r + 1) == l.num_sites() as u32)
        .unwrap()
}

fn c11_oracles() -> Verdict {
    // Association ordering.
    let mut order_bad = 0;
    for scene in 0..100u64 {
        let mut s = derive_stream(11, &[scene]);
        let n = 1 + s.below(60) as usize;
        let p: Vec<f64> = (0..n)
            .map(|_| {
                if s.uniform() < 0.2 {
                    -90.0
                } else {
                    -120.0 + 60.0 * s.uniform()
                }
            })
            .collect();
        let set = MeasurementSet::from_rsrp(p.clone()).unwrap();
        if set.order != oracle_order(&p) || set.strongest() != oracle_order(&p)[0] {
            order_bad += 1;
        }
    }
    // Percentiles against direct sort indexing, p on a quarter-percent grid.
    let mut s = derive_stream(11, &[1000]);
    let x: Vec<f64> = (0..10_000)
        .map(|_| (s.uniform() * 1000.0).floor())
        .collect();
    let mut sorted = x.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut pct_bad = 0;
    for k in 0..=400usize {
        let rank = (k * n).div_ceil(400).max(1);
        if percentile(&x, k as f64 / 4.0).unwrap() != sorted[rank - 1] {
            pct_bad += 1;
        }
    }
    // Wraparound against a 49-image brute force.
    let layout = build_hex_layout(500.0, 2, 25.0)
        .unwrap()
        .with_wraparound(true);
    let mut s = derive_stream(11, &[2000]);
    let mut wrap_bad = 0;
    // Uniform inside a random site's hexagon (inradius isd/2, faces at
    // 30+60k degrees), i.e. inside the cluster.
    let pt = |s: &mut aeronet_core::stats::Stream| loop {
        let site = layout.site_positions[s.below(19) as usize];
        let r = 500.0 / 3f64.sqrt();
        let (x, y) = (-r + 2.0 * r * s.uniform(), -r + 2.0 * r * s.uniform());
        let inside = (0..3).all(|k| {
            let th = (30.0 + 60.0 * k as f64).to_radians();
            (x * th.cos() + y * th.sin()).abs() <= 250.0
        });
        if inside {
            break [site[0] + x, site[1] + y, 300.0 * s.uniform()];
        }
    };
    for _ in 0..1000 {
        let p = pt(&mut s);
        let q = pt(&mut s);
        let d = layout.wrap_displacement(p, q);
        let got = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if (got - brute_wrap_norm(&layout, p, q)).abs() > WRAP_TOL_M * got.max(1.0) {
            wrap_bad += 1;
        }
    }
    Verdict {
        id: 11,
        name: "oracle suites",
        pass: order_bad == 0 && pct_bad == 0 && wrap_bad == 0,
        detail: format!(
            "ordering mismatches {order_bad}/100, percentile mismatches {pct_bad}/401, wrap mismatches {wrap_bad}/1000"
        ),
    }
}

#[test]
fn acceptance() {
    let root = tempfile::tempdir().unwrap();
    let mut verdicts = vec![c1_deployment(), c2_antenna(), c3_rsrq(), c11_oracles()];

    let map = run_preset("paper-map-heights", root.path());
    verdicts.push(c4_fragmentation(&map));
    verdicts.push(c9_sinr(&map));
    let l6 = run_preset("paper-latency-6prb", root.path());
    let l15 = run_preset("paper-latency-15prb", root.path());
    verdicts.push(c5_utilization(&l6, &l15));
    verdicts.push(c6_latency(&l6, &l15));
    let fig7 = run_preset("paper-fig7-replica", root.path());
    verdicts.push(c7_fig7(&fig7));
    let rlf = run_preset("paper-rlf-heights", root.path());
    verdicts.push(c8_rlf(&rlf));
    let all = [
        ("paper-latency-6prb", &l6),
        ("paper-latency-15prb", &l15),
        ("paper-map-heights", &map),
        ("paper-fig7-replica", &fig7),
        ("paper-rlf-heights", &rlf),
    ];
    verdicts.push(c10_determinism(&all, root.path()));

    verdicts.sort_by_key(|v| v.id);
    for v in &verdicts {
        println!(
            "[{}] criterion {:>2} {}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.id,
            v.name,
            v.detail
        );
    }
    let failed: Vec<u32> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
