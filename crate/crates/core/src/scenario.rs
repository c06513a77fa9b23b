//! Scenario files: one JSON document describing the deployment, antenna,
//! channel and exactly one experiment, plus the runner that executes it and
//! writes its CSV outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::antenna::CompositePattern;
use crate::channel::ChannelParams;
use crate::deployment::{build_hex_layout, sectorize};
use crate::error::{Result, SimError};
use crate::latency::{
    latency_cdf, run_latency_sim, LatencyScenario, LinkAdaptation, TrafficConfig, UeAssociation,
};
use crate::mobility::{
    random_straight_routes, run_mobility_sim, HandoverConfig, MobilityConfig, MobilityResult,
    RlfConfig, Trajectory,
};
use crate::output;
use crate::radio::{
    coverage_map, fragmentation_stats, AssociationMap, FadingMode, FragmentationStats, GridSpec,
    Network,
};
use crate::stats::{median, SeedSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutConfig {
    pub isd_m: f64,
    pub rings: u32,
    pub bs_height_m: f64,
    pub wraparound: bool,
    pub bearings_deg: [f64; 3],
    pub tx_power_dbm: f64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            isd_m: 500.0,
            rings: 2,
            bs_height_m: 25.0,
            wraparound: false,
            bearings_deg: [0.0, 120.0, 240.0],
            tx_power_dbm: 46.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapExperiment {
    pub heights_m: Vec<f64>,
    /// Points per axis of the square raster.
    pub grid_points: usize,
    pub half_width_m: f64,
    pub fading: FadingMode,
    /// Restrict the raster to the central site's square `[-isd/2, isd/2]²`.
    pub center_only: bool,
}

impl Default for MapExperiment {
    fn default() -> Self {
        Self {
            heights_m: vec![1.5, 100.0, 300.0],
            grid_points: 200,
            half_width_m: 350.0,
            fading: FadingMode::Off,
            center_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyExperiment {
    pub heights_m: Vec<f64>,
    pub prbs: u32,
    pub ues_per_cell: usize,
    pub duration_ms: u64,
    pub drain_ms: u64,
    pub traffic: TrafficConfig,
    pub link_adaptation: LinkAdaptation,
    pub association: UeAssociation,
    pub min_drop_distance_m: f64,
    /// Only packets and utilization of the central site's cells are reported.
    pub center_only: bool,
}

impl Default for LatencyExperiment {
    fn default() -> Self {
        Self {
            heights_m: vec![1.5, 30.0, 50.0, 100.0, 300.0],
            prbs: 6,
            ues_per_cell: 5,
            duration_ms: 60_000,
            drain_ms: 1000,
            traffic: TrafficConfig::default(),
            link_adaptation: LinkAdaptation::default(),
            association: UeAssociation::default(),
            min_drop_distance_m: 10.0,
            center_only: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomRoutes {
    pub count: usize,
    pub length_m: f64,
    pub start_radius_m: f64,
    /// Geometry seed; kept apart from the scenario seed so route sets can
    /// stay fixed while fading realizations change.
    pub route_seed: u64,
}

impl Default for RandomRoutes {
    fn default() -> Self {
        Self {
            count: 200,
            length_m: 2000.0,
            start_radius_m: 500.0,
            route_seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilityExperiment {
    pub heights_m: Vec<f64>,
    pub speed_kmh: f64,
    pub sample_dt_ms: u64,
    /// Explicit routes, one waypoint list each. Exclusive with `random`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub waypoints: Vec<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomRoutes>,
    pub handover: HandoverConfig,
    pub rlf: RlfConfig,
    pub interference_activity: f64,
    pub shadowing: bool,
    pub trace_routes: usize,
}

impl Default for MobilityExperiment {
    fn default() -> Self {
        let m = MobilityConfig::default();
        Self {
            heights_m: vec![1.5, 150.0],
            speed_kmh: 30.0,
            sample_dt_ms: 20,
            waypoints: Vec::new(),
            random: None,
            handover: m.handover,
            rlf: m.rlf,
            interference_activity: m.interference_activity,
            shadowing: m.shadowing,
            trace_routes: m.trace_routes,
        }
    }
}

impl MobilityExperiment {
    pub fn config(&self) -> MobilityConfig {
        MobilityConfig {
            handover: self.handover,
            rlf: self.rlf,
            interference_activity: self.interference_activity,
            shadowing: self.shadowing,
            trace_routes: self.trace_routes,
        }
    }

    pub fn routes(&self, height_m: f64) -> Vec<Trajectory> {
        let speed_mps = self.speed_kmh / 3.6;
        match &self.random {
            Some(r) => random_straight_routes(
                r.route_seed,
                r.count,
                r.length_m,
                r.start_radius_m,
                speed_mps,
                height_m,
                self.sample_dt_ms,
            ),
            None => self
                .waypoints
                .iter()
                .map(|w| Trajectory {
                    waypoints: w.clone(),
                    speed_mps,
                    height_m,
                    sample_dt_ms: self.sample_dt_ms,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<MapExperiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyExperiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mobility: Option<MobilityExperiment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Map,
    Latency,
    Mobility,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Map => "map",
            Self::Latency => "latency",
            Self::Mobility => "mobility",
        }
    }
}

impl ExperimentBlock {
    pub fn kind(&self) -> Result<ExperimentKind> {
        match (&self.map, &self.latency, &self.mobility) {
            (Some(_), None, None) => Ok(ExperimentKind::Map),
            (None, Some(_), None) => Ok(ExperimentKind::Latency),
            (None, None, Some(_)) => Ok(ExperimentKind::Mobility),
            (None, None, None) => Err(SimError::config(
                "experiment",
                "missing experiment block: expected one of `map`, `latency`, `mobility`",
            )),
            _ => Err(SimError::config(
                "experiment",
                "exactly one experiment block is allowed",
            )),
        }
    }
}

fn default_seed() -> u64 {
    1
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub layout: LayoutConfig,
    #[serde(default)]
    pub antenna: CompositePattern,
    #[serde(default)]
    pub channel: ChannelParams,
    pub experiment: ExperimentBlock,
}

/// Parse and validate a scenario document. Errors carry the key path.
pub fn load_scenario(text: &str) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let sc: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        SimError::config(path, e.into_inner().to_string())
    })?;
    sc.validate()?;
    Ok(sc)
}

pub fn load_scenario_file(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    load_scenario(&text)
}

fn check_heights(path: &str, heights: &[f64]) -> Result<()> {
    if heights.is_empty() {
        return Err(SimError::config(path, "at least one height is required"));
    }
    if let Some(h) = heights.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
        return Err(SimError::config(path, format!("height {h} must be > 0")));
    }
    Ok(())
}

impl Scenario {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn kind(&self) -> Result<ExperimentKind> {
        self.experiment.kind()
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.layout;
        if !(l.isd_m > 0.0 && l.isd_m.is_finite()) {
            return Err(SimError::config("layout.isd_m", "must be > 0"));
        }
        if !(l.bs_height_m > 0.0) {
            return Err(SimError::config("layout.bs_height_m", "must be > 0"));
        }
        if !l.tx_power_dbm.is_finite() {
            return Err(SimError::config("layout.tx_power_dbm", "must be finite"));
        }
        self.antenna.validate()?;
        self.channel.validate()?;
        match self.kind()? {
            ExperimentKind::Map => {
                let m = self.experiment.map.as_ref().expect("kind checked");
                check_heights("experiment.map.heights_m", &m.heights_m)?;
                if m.grid_points < 2 {
                    return Err(SimError::config(
                        "experiment.map.grid_points",
                        "must be >= 2",
                    ));
                }
                if !(m.half_width_m > 0.0) {
                    return Err(SimError::config(
                        "experiment.map.half_width_m",
                        "must be > 0",
                    ));
                }
            }
            ExperimentKind::Latency => {
                let x = self.experiment.latency.as_ref().expect("kind checked");
                check_heights("experiment.latency.heights_m", &x.heights_m)?;
                if x.ues_per_cell == 0 {
                    return Err(SimError::config(
                        "experiment.latency.ues_per_cell",
                        "must be >= 1",
                    ));
                }
                for &h in &x.heights_m {
                    self.latency_scenario(x, h)
                        .validate(self.channel.system_prbs)?;
                }
            }
            ExperimentKind::Mobility => {
                let x = self.experiment.mobility.as_ref().expect("kind checked");
                check_heights("experiment.mobility.heights_m", &x.heights_m)?;
                if !(x.speed_kmh > 0.0) {
                    return Err(SimError::config(
                        "experiment.mobility.speed_kmh",
                        "must be > 0",
                    ));
                }
                if x.sample_dt_ms == 0 {
                    return Err(SimError::config(
                        "experiment.mobility.sample_dt_ms",
                        "must be > 0",
                    ));
                }
                match (&x.random, x.waypoints.is_empty()) {
                    (None, true) => {
                        return Err(SimError::config(
                            "experiment.mobility",
                            "one of `waypoints` or `random` is required",
                        ))
                    }
                    (Some(_), false) => {
                        return Err(SimError::config(
                            "experiment.mobility",
                            "`waypoints` and `random` are mutually exclusive",
                        ))
                    }
                    (Some(r), true) if r.count == 0 || !(r.length_m > 0.0) => {
                        return Err(SimError::config(
                            "experiment.mobility.random",
                            "count and length_m must be > 0",
                        ))
                    }
                    _ => {}
                }
                if let Some((i, _)) = x.waypoints.iter().enumerate().find(|(_, w)| w.len() < 2) {
                    return Err(SimError::config(
                        format!("experiment.mobility.waypoints[{i}]"),
                        "a route needs at least two waypoints",
                    ));
                }
                x.config().validate()?;
            }
        }
        Ok(())
    }

    pub fn network(&self) -> Result<Network> {
        let l = &self.layout;
        let layout =
            build_hex_layout(l.isd_m, l.rings, l.bs_height_m)?.with_wraparound(l.wraparound);
        let cells = sectorize(&layout, l.bearings_deg, l.tx_power_dbm)?;
        Ok(Network {
            layout,
            cells,
            pattern: self.antenna,
            channel: self.channel,
        })
    }

    pub fn latency_scenario(&self, x: &LatencyExperiment, height_m: f64) -> LatencyScenario {
        LatencyScenario {
            ue_height_m: height_m,
            ues_per_cell: x.ues_per_cell,
            prb_pool: x.prbs,
            sim_duration_ms: x.duration_ms,
            drain_ms: x.drain_ms,
            seed: self.seed,
            traffic: x.traffic,
            link_adaptation: x.link_adaptation,
            association: x.association,
            min_drop_distance_m: x.min_drop_distance_m,
        }
    }

    /// Replace the height sweep of whichever experiment is configured.
    pub fn set_heights(&mut self, heights: Vec<f64>) {
        let e = &mut self.experiment;
        if let Some(m) = e.map.as_mut() {
            m.heights_m = heights.clone();
        }
        if let Some(m) = e.latency.as_mut() {
            m.heights_m = heights.clone();
        }
        if let Some(m) = e.mobility.as_mut() {
            m.heights_m = heights;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapRun {
    pub map: AssociationMap,
    pub stats: FragmentationStats,
    pub median_rs_sinr_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyRow {
    pub height_m: f64,
    pub prbs: u32,
    pub ues: usize,
    pub utilization: f64,
    pub frac_within_bound: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobilityRun {
    pub height_m: f64,
    pub routes: usize,
    pub result: MobilityResult,
}

impl MobilityRun {
    pub fn rlf_per_km(&self) -> f64 {
        let km = self.result.totals.km_flown;
        if km > 0.0 {
            self.result.totals.rlfs as f64 / km
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Map(Vec<MapRun>),
    Latency(Vec<LatencyRow>),
    Mobility(Vec<MobilityRun>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    /// One line per experiment point (height), as printed by the CLI.
    pub summary: Vec<String>,
    pub outcome: Outcome,
}

/// Execute the scenario's experiment and write every output file into
/// `out_dir`.
pub fn run(sc: &Scenario) -> Result<RunReport> {
    sc.validate()?;
    let net = sc.network()?;
    let dir = &sc.out_dir;
    std::fs::create_dir_all(dir)?;
    output::write_layout(dir, sc.seed, &net)?;
    output::write_cells(dir, sc.seed, &net)?;
    match sc.kind()? {
        ExperimentKind::Map => run_map(sc, &net, sc.experiment.map.as_ref().expect("kind checked")),
        ExperimentKind::Latency => run_latency(
            sc,
            &net,
            sc.experiment.latency.as_ref().expect("kind checked"),
        ),
        ExperimentKind::Mobility => run_mobility(
            sc,
            &net,
            sc.experiment.mobility.as_ref().expect("kind checked"),
        ),
    }
}

fn run_map(sc: &Scenario, net: &Network, x: &MapExperiment) -> Result<RunReport> {
    let hw = if x.center_only {
        sc.layout.isd_m / 2.0
    } else {
        x.half_width_m
    };
    let grid = GridSpec::centered(hw, x.grid_points);
    let seed = SeedSpec::new(sc.seed);
    let mut runs = Vec::with_capacity(x.heights_m.len());
    let mut summary = Vec::new();
    for &h in &x.heights_m {
        let map = coverage_map(net, h, &grid, x.fading, &seed)?;
        let stats = fragmentation_stats(&map, &net.layout);
        let median_rs_sinr_db = median(&map.rs_sinr_db);
        summary.push(format!(
            "map height_m={h} non_nearest_fraction={:.4} component_count={} mean_serving_distance_m={:.1} median_rs_sinr_db={:.2}",
            stats.non_nearest_fraction, stats.component_count, stats.mean_serving_distance_m, median_rs_sinr_db
        ));
        runs.push(MapRun {
            map,
            stats,
            median_rs_sinr_db,
        });
    }
    output::write_map(&sc.out_dir, sc.seed, net, &runs)?;
    Ok(RunReport {
        summary,
        outcome: Outcome::Map(runs),
    })
}

fn run_latency(sc: &Scenario, net: &Network, x: &LatencyExperiment) -> Result<RunReport> {
    let keep = |cell: usize| !x.center_only || net.cells[cell].site_id == 0;
    let mut rows = Vec::new();
    let mut results = Vec::new();
    let mut summary = Vec::new();
    for &h in &x.heights_m {
        let res = run_latency_sim(net, &sc.latency_scenario(x, h))?;
        let lat: Vec<f64> = res
            .packets
            .iter()
            .filter(|p| keep(p.cell_id))
            .map(|p| p.latency_ms)
            .collect();
        let cdf = latency_cdf(&lat, x.traffic.latency_bound_ms)?;
        let kept: Vec<f64> = res
            .cell_utilization
            .iter()
            .enumerate()
            .filter(|(c, _)| keep(*c))
            .map(|(_, u)| *u)
            .collect();
        let utilization = if x.center_only {
            kept.iter().sum::<f64>() / kept.len().max(1) as f64
        } else {
            res.utilization
        };
        let row = LatencyRow {
            height_m: h,
            prbs: x.prbs,
            ues: res.ues.len(),
            utilization,
            frac_within_bound: cdf.fraction_within_bound,
            p50_ms: cdf.at(50.0).unwrap_or(f64::NAN),
            p95_ms: cdf.at(95.0).unwrap_or(f64::NAN),
        };
        summary.push(format!(
            "latency height_m={h} prbs={} utilization={:.3} frac_within_{}ms={:.4} p50_ms={} p95_ms={}",
            x.prbs, row.utilization, x.traffic.latency_bound_ms, row.frac_within_bound, row.p50_ms, row.p95_ms
        ));
        rows.push(row);
        results.push((h, res));
    }
    output::write_latency(&sc.out_dir, sc.seed, &results, &rows, &keep)?;
    Ok(RunReport {
        summary,
        outcome: Outcome::Latency(rows),
    })
}

fn run_mobility(sc: &Scenario, net: &Network, x: &MobilityExperiment) -> Result<RunReport> {
    let cfg = x.config();
    let mut runs = Vec::new();
    let mut summary = Vec::new();
    for &h in &x.heights_m {
        let routes = x.routes(h);
        let result = run_mobility_sim(net, &routes, &cfg, sc.seed)?;
        let run = MobilityRun {
            height_m: h,
            routes: routes.len(),
            result,
        };
        let t = &run.result.totals;
        summary.push(format!(
            "mobility height_m={h} routes={} km={:.1} reports={} handovers={} handover_failures={} rlfs={} rlf_per_km={:.3}",
            run.routes,
            t.km_flown,
            t.reports,
            t.handovers,
            t.handover_failures,
            t.rlfs,
            run.rlf_per_km()
        ));
        runs.push(run);
    }
    output::write_mobility(&sc.out_dir, sc.seed, &runs)?;
    Ok(RunReport {
        summary,
        outcome: Outcome::Mobility(runs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{ "experiment": { "map": {} } }"#;

    #[test]
    fn defaults_fill_in() {
        let sc = load_scenario(MINIMAL).unwrap();
        assert_eq!(sc.seed, 1);
        assert_eq!(sc.layout, LayoutConfig::default());
        assert_eq!(sc.kind().unwrap(), ExperimentKind::Map);
        let net = sc.network().unwrap();
        assert_eq!(net.layout.num_sites(), 19);
        assert_eq!(net.cells.len(), 57);
    }

    #[test]
    fn empty_experiment_block_names_it() {
        let e = load_scenario(r#"{ "experiment": {} }"#)
            .unwrap_err()
            .to_string();
        assert!(e.contains("experiment") && e.contains("missing"), "{e}");
    }

    #[test]
    fn absent_experiment_block() {
        let e = load_scenario(r#"{ "seed": 3 }"#).unwrap_err().to_string();
        assert!(e.contains("experiment"), "{e}");
    }

    #[test]
    fn two_blocks_rejected() {
        let e = load_scenario(r#"{ "experiment": { "map": {}, "latency": {} } }"#).unwrap_err();
        assert!(e.to_string().contains("exactly one"));
    }

    #[test]
    fn unknown_key_has_path() {
        let e = load_scenario(
            r#"{ "channel": { "fc_ghz": 2.0, "fc_gz": 1 }, "experiment": { "map": {} } }"#,
        )
        .unwrap_err()
        .to_string();
        assert!(e.contains("channel") && e.contains("fc_gz"), "{e}");
        let e = load_scenario(r#"{ "experiment": { "latency": { "prbz": 6 } } }"#)
            .unwrap_err()
            .to_string();
        assert!(
            e.contains("experiment.latency") && e.contains("prbz"),
            "{e}"
        );
    }

    #[test]
    fn out_of_range_values() {
        let e = load_scenario(r#"{ "experiment": { "latency": { "prbs": 80 } } }"#).unwrap_err();
        assert!(e.to_string().contains("experiment.latency.prbs"));
        let e = load_scenario(r#"{ "layout": { "isd_m": -1 }, "experiment": { "map": {} } }"#)
            .unwrap_err();
        assert!(e.to_string().contains("layout.isd_m"));
        let e = load_scenario(r#"{ "experiment": { "mobility": {} } }"#).unwrap_err();
        assert!(e.to_string().contains("waypoints"));
        let e = load_scenario(r#"{ "experiment": { "map": { "heights_m": [] } } }"#).unwrap_err();
        assert!(e.to_string().contains("heights_m"));
    }

    #[test]
    fn round_trip() {
        let text = r#"{
            "seed": 9,
            "layout": { "wraparound": true },
            "experiment": { "mobility": { "waypoints": [[[0, 0], [100, 0]]], "trace_routes": 1 } }
        }"#;
        let a = load_scenario(text).unwrap();
        let b = load_scenario(&a.to_json()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.to_json(), a.to_json());
    }

    #[test]
    fn height_override() {
        let mut sc = load_scenario(r#"{ "experiment": { "latency": {} } }"#).unwrap();
        sc.set_heights(vec![42.0]);
        assert_eq!(
            sc.experiment.latency.as_ref().unwrap().heights_m,
            vec![42.0]
        );
    }
}
