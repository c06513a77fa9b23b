//! CSV and PGM emission. Every CSV starts with a `# seed=<n>` comment line
//! followed by a header row; floats use the shortest round-trip form so
//! files are byte-stable across runs.

use std::fmt::Display;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::antenna::{composite_gain_db, CompositePattern};
use crate::error::Result;
use crate::latency::LatencyResult;
use crate::radio::{AssociationMap, Network};
use crate::scenario::{LatencyRow, MapRun, MobilityRun};

fn csv(dir: &Path, name: &str, seed: u64, header: &str) -> Result<BufWriter<File>> {
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    writeln!(w, "# seed={seed}")?;
    writeln!(w, "{header}")?;
    Ok(w)
}

fn opt<T: Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_layout(dir: &Path, seed: u64, net: &Network) -> Result<()> {
    let mut w = csv(dir, "layout.csv", seed, "site_id,x_m,y_m,z_m")?;
    for s in 0..net.layout.num_sites() {
        let [x, y, z] = net.layout.site_pos3(s);
        writeln!(w, "{s},{x},{y},{z}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cells(dir: &Path, seed: u64, net: &Network) -> Result<()> {
    let mut w = csv(dir, "cells.csv", seed, "cell_id,site_id,bearing_deg")?;
    for c in &net.cells {
        writeln!(w, "{},{},{}", c.cell_id, c.site_id, c.bearing_deg)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_map(dir: &Path, seed: u64, net: &Network, runs: &[MapRun]) -> Result<()> {
    let mut w = csv(
        dir,
        "assoc_map.csv",
        seed,
        "ix,iy,x_m,y_m,height_m,serving_cell,serving_site,rsrp_dbm,rs_sinr_db",
    )?;
    for r in runs {
        let m = &r.map;
        let g = &m.grid;
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let i = iy * g.nx + ix;
                let [x, y] = g.point(ix, iy);
                writeln!(
                    w,
                    "{ix},{iy},{x},{y},{},{},{},{},{}",
                    m.height_m,
                    m.serving_cell[i],
                    m.serving_site[i],
                    m.rsrp_dbm[i],
                    m.rs_sinr_db[i]
                )?;
            }
        }
    }
    w.flush()?;

    let mut w = csv(
        dir,
        "map_stats.csv",
        seed,
        "height_m,non_nearest_fraction,mean_serving_distance_m,component_count,median_rs_sinr_db",
    )?;
    for r in runs {
        let s = &r.stats;
        writeln!(
            w,
            "{},{},{},{},{}",
            r.map.height_m,
            s.non_nearest_fraction,
            s.mean_serving_distance_m,
            s.component_count,
            r.median_rs_sinr_db
        )?;
    }
    w.flush()?;

    for r in runs {
        let ncells = net.cells.len().max(2);
        write_pgm(
            dir,
            &format!("assoc_map_h{}.pgm", r.map.height_m),
            &r.map,
            ncells - 1,
            |i| r.map.serving_cell[i] as u32,
        )?;
        write_pgm(
            dir,
            &format!("rs_sinr_h{}.pgm", r.map.height_m),
            &r.map,
            255,
            |i| {
                // -20..30 dB onto the grey scale
                ((r.map.rs_sinr_db[i] + 20.0) / 50.0 * 255.0)
                    .clamp(0.0, 255.0)
                    .round() as u32
            },
        )?;
    }
    Ok(())
}

/// Plain-text PGM (P2), top row = largest y.
fn write_pgm(
    dir: &Path,
    name: &str,
    m: &AssociationMap,
    maxval: usize,
    value: impl Fn(usize) -> u32,
) -> Result<()> {
    let g = &m.grid;
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    writeln!(w, "P2")?;
    writeln!(w, "# height_m={}", m.height_m)?;
    writeln!(w, "{} {}", g.nx, g.ny)?;
    writeln!(w, "{maxval}")?;
    for iy in (0..g.ny).rev() {
        let row: Vec<String> = (0..g.nx)
            .map(|ix| value(iy * g.nx + ix).to_string())
            .collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_latency(
    dir: &Path,
    seed: u64,
    results: &[(f64, LatencyResult)],
    rows: &[LatencyRow],
    keep: &dyn Fn(usize) -> bool,
) -> Result<()> {
    let mut w = csv(
        dir,
        "latency_samples.csv",
        seed,
        "height_m,ue_id,cell_id,arrival_ms,latency_ms",
    )?;
    for (h, res) in results {
        for p in res.packets.iter().filter(|p| keep(p.cell_id)) {
            writeln!(
                w,
                "{h},{},{},{},{}",
                p.ue_id, p.cell_id, p.arrival_ms, p.latency_ms
            )?;
        }
    }
    w.flush()?;

    let mut w = csv(dir, "sinr_samples.csv", seed, "height_m,sinr_db")?;
    for (h, res) in results {
        for s in &res.sinr_samples_db {
            writeln!(w, "{h},{s}")?;
        }
    }
    w.flush()?;

    let mut w = csv(
        dir,
        "summary.csv",
        seed,
        "height_m,prbs,utilization,frac_within_50ms,p50_ms,p95_ms",
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.height_m, r.prbs, r.utilization, r.frac_within_bound, r.p50_ms, r.p95_ms
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_mobility(dir: &Path, seed: u64, runs: &[MobilityRun]) -> Result<()> {
    let mut w = csv(
        dir,
        "trace.csv",
        seed,
        "height_m,route_id,t_ms,cell_id,rsrp_filtered_dbm,serving,serving_sinr_db",
    )?;
    for r in runs {
        for s in &r.result.trace {
            let serving = (s.serving != usize::MAX).then_some(s.serving);
            for (c, f) in s.filtered_dbm.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{c},{f},{},{}",
                    r.height_m,
                    s.route_id,
                    s.t_ms,
                    opt(serving),
                    s.serving_sinr_db
                )?;
            }
        }
    }
    w.flush()?;

    let mut w = csv(
        dir,
        "events.csv",
        seed,
        "height_m,t_ms,route_id,event,cell_from,cell_to",
    )?;
    for r in runs {
        for e in &r.result.events {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.height_m,
                e.t_ms,
                e.route_id,
                e.kind.as_str(),
                opt(e.cell_from),
                opt(e.cell_to)
            )?;
        }
    }
    w.flush()?;

    let mut w = csv(
        dir,
        "mobility_summary.csv",
        seed,
        "height_m,routes,handovers,rlfs,rlf_per_km",
    )?;
    for r in runs {
        let t = &r.result.totals;
        writeln!(
            w,
            "{},{},{},{},{}",
            r.height_m,
            r.routes,
            t.handovers,
            t.rlfs,
            r.rlf_per_km()
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Composite gain on a 1° grid: elevation -90..=90, azimuth -180..=180
/// relative to boresight.
pub fn write_pattern(dir: &Path, seed: u64, pattern: &CompositePattern) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv(dir, "pattern.csv", seed, "el_deg,az_deg,gain_dbi")?;
    for el in -90..=90 {
        for az in -180..=180 {
            writeln!(
                w,
                "{el},{az},{}",
                composite_gain_db(az as f64, el as f64, pattern)
            )?;
        }
    }
    w.flush()?;
    Ok(())
}
