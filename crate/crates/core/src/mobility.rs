//! Drone mobility: routes, time-correlated shadowing, layer-3 filtering,
//! A3 and multi-cell threshold reporting, handover execution and RLF
//! supervision.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{db_to_lin, lin_to_db, los_probability, shadow_sigma_db};
use crate::deployment::{horizontal_norm, Point3};
use crate::error::{Result, SimError};
use crate::radio::{argmax_lowest, Network};
use crate::stats::{Purpose, SeedSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub waypoints: Vec<[f64; 2]>,
    pub speed_mps: f64,
    pub height_m: f64,
    pub sample_dt_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteSample {
    pub t_ms: u64,
    pub pos: Point3,
    /// Distance flown since the start.
    pub dist_m: f64,
}

/// Constant-speed piecewise-linear interpolation of the waypoints.
pub fn build_route(traj: &Trajectory) -> Result<Vec<RouteSample>> {
    if traj.waypoints.len() < 2 {
        return Err(SimError::config(
            "route.waypoints",
            "at least two waypoints are required",
        ));
    }
    if !(traj.speed_mps > 0.0) {
        return Err(SimError::config("route.speed", "speed must be > 0"));
    }
    if traj.sample_dt_ms == 0 {
        return Err(SimError::config("route.sample_dt_ms", "must be > 0"));
    }
    let seg_len: Vec<f64> = traj
        .waypoints
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .collect();
    let total: f64 = seg_len.iter().sum();
    if !(total > 0.0) {
        return Err(SimError::config("route.waypoints", "route has zero length"));
    }
    let step = traj.speed_mps * traj.sample_dt_ms as f64 / 1000.0;
    let n = (total / step - 1e-9).ceil() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for k in 0..n {
        let s = (k as f64 * step).min(total);
        while seg + 1 < seg_len.len() && s > seg_start + seg_len[seg] {
            seg_start += seg_len[seg];
            seg += 1;
        }
        let a = traj.waypoints[seg];
        let b = traj.waypoints[seg + 1];
        let pos = if k + 1 == n {
            *traj.waypoints.last().expect("non-empty")
        } else if seg_len[seg] > 0.0 {
            let f = ((s - seg_start) / seg_len[seg]).clamp(0.0, 1.0);
            [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]
        } else {
            a
        };
        out.push(RouteSample {
            t_ms: k as u64 * traj.sample_dt_ms,
            pos: [pos[0], pos[1], traj.height_m],
            dist_m: s,
        });
    }
    Ok(out)
}

/// Gauss-Markov shadowing along a route: `s[n+1] = ρ·s[n] + sqrt(1-ρ²)·w`
/// with `ρ = exp(-Δd/decorrelation)`, stationary std `sigma_db`.
pub fn correlated_shadow_track(
    seed: &SeedSpec,
    route_id: usize,
    cell_id: usize,
    dist_m: &[f64],
    sigma_db: f64,
    decorrelation_m: f64,
) -> Vec<f64> {
    let mut s = seed.stream(Purpose::ShadowTrack, cell_id as u64, route_id as u64, 0);
    let mut out = Vec::with_capacity(dist_m.len());
    let mut prev_d: Option<f64> = None;
    let mut x = 0.0;
    for &d in dist_m {
        let w = s.gaussian();
        x = match prev_d {
            None => w,
            Some(p) => {
                let rho = (-(d - p).abs() / decorrelation_m).exp();
                rho * x + (1.0 - rho * rho).sqrt() * w
            }
        };
        prev_d = Some(d);
        out.push(sigma_db * x);
    }
    out
}

/// Layer-3 filter coefficient `1/2^(k/4)`.
pub fn l3_coefficient(k: u32) -> f64 {
    1.0 / 2f64.powf(k as f64 / 4.0)
}

/// `F[n] = (1-a)·F[n-1] + a·M[n]`, `F[0] = M[0]`, in dB.
pub fn l3_filter(raw_dbm: &[f64], k: u32) -> Vec<f64> {
    let a = l3_coefficient(k);
    let mut out = Vec::with_capacity(raw_dbm.len());
    for &m in raw_dbm {
        let f = match out.last() {
            None => m,
            Some(&prev) => (1.0 - a) * prev + a * m,
        };
        out.push(f);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMetric {
    Rsrp,
    Rsrq,
    RsSinr,
}

/// Report when at least `n_cells` cells are above a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdTrigger {
    pub metric: ThresholdMetric,
    /// dBm for RSRP, dB otherwise.
    pub threshold: f64,
    pub n_cells: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HandoverConfig {
    pub a3_offset_db: f64,
    pub time_to_trigger_ms: u64,
    pub l3_filter_k: u32,
    pub report_delay_ms: u64,
    pub ho_command_delay_ms: u64,
    pub ho_execution_ms: u64,
    pub report_prohibit_ms: u64,
    pub threshold_trigger: Option<ThresholdTrigger>,
}

impl Default for HandoverConfig {
    fn default() -> Self {
        Self {
            a3_offset_db: 3.0,
            time_to_trigger_ms: 160,
            l3_filter_k: 4,
            report_delay_ms: 50,
            ho_command_delay_ms: 50,
            ho_execution_ms: 40,
            report_prohibit_ms: 1000,
            threshold_trigger: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlfConfig {
    pub qout_db: f64,
    pub qin_db: f64,
    pub t310_ms: u64,
    pub reestablishment_delay_ms: u64,
}

impl Default for RlfConfig {
    fn default() -> Self {
        Self {
            qout_db: -8.0,
            qin_db: -6.0,
            t310_ms: 1000,
            reestablishment_delay_ms: 200,
        }
    }
}

/// A3: some neighbor's filtered RSRP exceeds the serving cell's by more than
/// the offset for the whole time-to-trigger.
#[derive(Debug, Clone)]
pub struct A3Evaluator {
    offset_db: f64,
    ttt_ms: u64,
    prohibit_ms: u64,
    entered: Vec<Option<u64>>,
    disarmed_at: Option<u64>,
}

impl A3Evaluator {
    pub fn new(n_cells: usize, cfg: &HandoverConfig) -> Self {
        Self {
            offset_db: cfg.a3_offset_db,
            ttt_ms: cfg.time_to_trigger_ms,
            prohibit_ms: cfg.report_prohibit_ms,
            entered: vec![None; n_cells],
            disarmed_at: None,
        }
    }

    /// Re-arm immediately (after a completed handover or re-establishment).
    pub fn rearm(&mut self) {
        self.disarmed_at = None;
        self.entered.iter_mut().for_each(|e| *e = None);
    }

    pub fn is_armed(&self, t_ms: u64) -> bool {
        match self.disarmed_at {
            None => true,
            Some(t0) => t_ms >= t0 + self.prohibit_ms,
        }
    }

    /// Returns the report target when the trigger fires at `t_ms`.
    pub fn evaluate(&mut self, filtered_dbm: &[f64], serving: usize, t_ms: u64) -> Option<usize> {
        let thr = filtered_dbm[serving] + self.offset_db;
        for (c, e) in self.entered.iter_mut().enumerate() {
            if c != serving && filtered_dbm[c] > thr {
                e.get_or_insert(t_ms);
            } else {
                *e = None;
            }
        }
        if !self.is_armed(t_ms) {
            return None;
        }
        self.disarmed_at = None;
        let target = self
            .entered
            .iter()
            .enumerate()
            .filter(|(_, e)| matches!(e, Some(t0) if t_ms - t0 >= self.ttt_ms))
            .map(|(c, _)| c)
            .max_by(|&a, &b| filtered_dbm[a].total_cmp(&filtered_dbm[b]).then(b.cmp(&a)))?;
        self.disarmed_at = Some(t_ms);
        Some(target)
    }
}

/// Pure A3 condition check for one instant (no time-to-trigger).
pub fn evaluate_a3(filtered_dbm: &[f64], serving: usize, offset_db: f64) -> Option<usize> {
    let thr = filtered_dbm[serving] + offset_db;
    (0..filtered_dbm.len())
        .filter(|&c| c != serving && filtered_dbm[c] > thr)
        .max_by(|&a, &b| filtered_dbm[a].total_cmp(&filtered_dbm[b]).then(b.cmp(&a)))
}

/// Multi-cell threshold report, repeated at most once per interval while
/// the condition holds.
#[derive(Debug, Clone)]
pub struct ThresholdEvaluator {
    trigger: ThresholdTrigger,
    interval_ms: u64,
    last_ms: Option<u64>,
}

impl ThresholdEvaluator {
    pub fn new(trigger: ThresholdTrigger, interval_ms: u64) -> Self {
        Self {
            trigger,
            interval_ms,
            last_ms: None,
        }
    }

    pub fn metric(&self) -> ThresholdMetric {
        self.trigger.metric
    }

    /// `values` holds the configured metric per cell. Fires when at least
    /// `n_cells` cells are above threshold and no report went out during the
    /// last interval.
    pub fn evaluate(&mut self, values: &[f64], t_ms: u64) -> bool {
        let due = self.last_ms.is_none_or(|l| t_ms >= l + self.interval_ms);
        let fired = due && evaluate_threshold_report(values, &self.trigger);
        if fired {
            self.last_ms = Some(t_ms);
        }
        fired
    }
}

pub fn evaluate_threshold_report(values: &[f64], trigger: &ThresholdTrigger) -> bool {
    values.iter().filter(|&&v| v > trigger.threshold).count() >= trigger.n_cells
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HoState {
    Connected,
    Reporting { target: usize, since_ms: u64 },
    CommandPending { target: usize, since_ms: u64 },
    Executing { target: usize, since_ms: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureCause {
    ReportLost,
    CommandLost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HoOutput {
    CommandSent { target: usize },
    Failure { target: usize, cause: FailureCause },
    Complete { target: usize },
}

/// Advance the handover procedure by one sample.
///
/// The report is lost if the serving RS-SINR is below Qout when it is sent,
/// the command is lost if it is below Qout when the UE should receive it.
pub fn step_handover_fsm(
    state: HoState,
    report: Option<usize>,
    sinr_db: f64,
    t_ms: u64,
    cfg: &HandoverConfig,
    qout_db: f64,
) -> Result<(HoState, Option<HoOutput>)> {
    use HoState::*;
    match (state, report) {
        (Connected, None) => Ok((Connected, None)),
        (Connected, Some(target)) => {
            if sinr_db < qout_db {
                Ok((
                    Connected,
                    Some(HoOutput::Failure {
                        target,
                        cause: FailureCause::ReportLost,
                    }),
                ))
            } else {
                Ok((
                    Reporting {
                        target,
                        since_ms: t_ms,
                    },
                    None,
                ))
            }
        }
        (_, Some(_)) => Err(SimError::Internal(format!(
            "measurement report delivered while a handover is in progress ({state:?})"
        ))),
        (Reporting { target, since_ms }, None) => {
            if t_ms - since_ms >= cfg.report_delay_ms {
                Ok((
                    CommandPending {
                        target,
                        since_ms: t_ms,
                    },
                    Some(HoOutput::CommandSent { target }),
                ))
            } else {
                Ok((state, None))
            }
        }
        (CommandPending { target, since_ms }, None) => {
            if t_ms - since_ms < cfg.ho_command_delay_ms {
                Ok((state, None))
            } else if sinr_db < qout_db {
                Ok((
                    Connected,
                    Some(HoOutput::Failure {
                        target,
                        cause: FailureCause::CommandLost,
                    }),
                ))
            } else {
                Ok((
                    Executing {
                        target,
                        since_ms: t_ms,
                    },
                    None,
                ))
            }
        }
        (Executing { target, since_ms }, None) => {
            if t_ms - since_ms >= cfg.ho_execution_ms {
                Ok((Connected, Some(HoOutput::Complete { target })))
            } else {
                Ok((state, None))
            }
        }
    }
}

/// T310 supervision of the serving link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RlfMonitor {
    pub t310_started_ms: Option<u64>,
}

impl RlfMonitor {
    /// Returns true when RLF is declared at `t_ms`. Below Qout starts the
    /// timer, above Qin stops it, in between it keeps running.
    pub fn step(&mut self, sinr_db: f64, t_ms: u64, cfg: &RlfConfig) -> bool {
        if sinr_db > cfg.qin_db {
            self.t310_started_ms = None;
            return false;
        }
        if sinr_db < cfg.qout_db && self.t310_started_ms.is_none() {
            self.t310_started_ms = Some(t_ms);
        }
        match self.t310_started_ms {
            Some(t0) if t_ms - t0 >= cfg.t310_ms => {
                self.t310_started_ms = None;
                true
            }
            _ => false,
        }
    }

    pub fn reset(&mut self) {
        self.t310_started_ms = None;
    }
}

pub fn step_rlf_monitor(
    state: RlfMonitor,
    sinr_db: f64,
    t_ms: u64,
    cfg: &RlfConfig,
) -> (RlfMonitor, bool) {
    let mut s = state;
    let fired = s.step(sinr_db, t_ms, cfg);
    (s, fired)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    CellSelected,
    ReportTriggered,
    ThresholdReport,
    HandoverCommand,
    HandoverComplete,
    HandoverFailure,
    RlfDeclared,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::CellSelected => "CellSelected",
            EventKind::ReportTriggered => "ReportTriggered",
            EventKind::ThresholdReport => "ThresholdReport",
            EventKind::HandoverCommand => "HandoverCommand",
            EventKind::HandoverComplete => "HandoverComplete",
            EventKind::HandoverFailure => "HandoverFailure",
            EventKind::RlfDeclared => "RlfDeclared",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityEvent {
    pub t_ms: u64,
    pub route_id: usize,
    pub kind: EventKind,
    pub cell_from: Option<usize>,
    pub cell_to: Option<usize>,
}

/// One sample of a traced route.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSample {
    pub route_id: usize,
    pub t_ms: u64,
    pub filtered_dbm: Vec<f64>,
    pub serving: usize,
    pub serving_sinr_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilityConfig {
    pub handover: HandoverConfig,
    pub rlf: RlfConfig,
    /// Activity factor of every non-serving cell when computing RS-SINR.
    pub interference_activity: f64,
    /// Whether shadowing is applied along routes.
    pub shadowing: bool,
    /// Number of leading routes whose full per-sample trace is kept.
    pub trace_routes: usize,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self {
            handover: HandoverConfig::default(),
            rlf: RlfConfig::default(),
            interference_activity: 1.0,
            shadowing: true,
            trace_routes: 1,
        }
    }
}

impl MobilityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.interference_activity) {
            return Err(SimError::config(
                "experiment.mobility.interference_activity",
                "must be in [0,1]",
            ));
        }
        if !(self.rlf.qout_db < self.rlf.qin_db) {
            return Err(SimError::config(
                "experiment.mobility.rlf",
                "qout_db must be below qin_db",
            ));
        }
        if self.handover.a3_offset_db < 0.0 {
            return Err(SimError::config(
                "experiment.mobility.handover.a3_offset_db",
                "must be >= 0",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RouteCounts {
    pub reports: usize,
    pub threshold_reports: usize,
    pub handovers: usize,
    pub handover_failures: usize,
    pub rlfs: usize,
    pub km_flown: f64,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MobilityResult {
    pub events: Vec<MobilityEvent>,
    pub trace: Vec<TraceSample>,
    pub per_route: Vec<RouteCounts>,
    pub totals: RouteCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Idle,
    Attached(usize),
    Reestablishing { until_ms: u64 },
}

struct RouteOutput {
    events: Vec<MobilityEvent>,
    trace: Vec<TraceSample>,
    counts: RouteCounts,
}

/// Raw (unfiltered) per-cell RSRP along a route, including LOS switching
/// and correlated shadowing. Row per sample.
pub fn route_rsrp(
    net: &Network,
    samples: &[RouteSample],
    route_id: usize,
    seed: &SeedSpec,
    shadowing: bool,
) -> Result<Vec<Vec<f64>>> {
    let dists: Vec<f64> = samples.iter().map(|s| s.dist_m).collect();
    let positions: Vec<Point3> = samples
        .iter()
        .map(|s| {
            let [x, y] = net.layout.wrap_position([s.pos[0], s.pos[1]]);
            [x, y, s.pos[2]]
        })
        .collect();
    let n_cells = net.cells.len();
    let mut rows = vec![vec![0.0; n_cells]; samples.len()];
    for cell in &net.cells {
        let u_los = seed
            .stream(Purpose::LosTrack, cell.cell_id as u64, route_id as u64, 0)
            .uniform();
        let track = if shadowing {
            correlated_shadow_track(
                seed,
                route_id,
                cell.cell_id,
                &dists,
                1.0,
                net.channel.sf_decorrelation_m,
            )
        } else {
            vec![0.0; samples.len()]
        };
        for (k, ue) in positions.iter().enumerate() {
            let d = net.displacement(cell, *ue);
            let los = u_los < los_probability(horizontal_norm(d), ue[2], &net.channel);
            let shadow_db = track[k] * shadow_sigma_db(ue[2], los, &net.channel);
            let link = crate::channel::LinkState { los, shadow_db };
            rows[k][cell.cell_id] =
                crate::channel::rx_power_per_re_dbm(cell, d, &link, &net.pattern, &net.channel)?;
        }
    }
    Ok(rows)
}

fn serving_sinr(lin: &[f64], total: f64, serving: usize, activity: f64, noise_lin: f64) -> f64 {
    let s = lin[serving];
    lin_to_db(s / (activity * (total - s).max(0.0) + noise_lin))
}

fn threshold_values(
    metric: ThresholdMetric,
    filtered: &[f64],
    activity: f64,
    noise_lin: f64,
) -> Vec<f64> {
    match metric {
        ThresholdMetric::Rsrp => filtered.to_vec(),
        ThresholdMetric::RsSinr | ThresholdMetric::Rsrq => {
            let total: f64 = filtered.iter().map(|&p| db_to_lin(p)).sum();
            filtered
                .iter()
                .map(|&p| {
                    let s = db_to_lin(p);
                    let sinr = s / (activity * (total - s) + noise_lin);
                    match metric {
                        ThresholdMetric::RsSinr => lin_to_db(sinr),
                        _ => lin_to_db(s / (12.0 * (s + activity * (total - s) + noise_lin))),
                    }
                })
                .collect()
        }
    }
}

fn simulate_route(
    net: &Network,
    traj: &Trajectory,
    route_id: usize,
    cfg: &MobilityConfig,
    seed: &SeedSpec,
    keep_trace: bool,
) -> Result<RouteOutput> {
    let samples = build_route(traj)?;
    let raw = route_rsrp(net, &samples, route_id, seed, cfg.shadowing)?;
    let n_cells = net.cells.len();
    let noise_lin = db_to_lin(net.noise_per_re_dbm());
    let a = l3_coefficient(cfg.handover.l3_filter_k);
    let hc = &cfg.handover;

    let mut filtered = raw[0].clone();
    let mut lin = vec![0.0; n_cells];
    let mut a3 = A3Evaluator::new(n_cells, hc);
    let mut thr = hc
        .threshold_trigger
        .map(|t| ThresholdEvaluator::new(t, hc.report_prohibit_ms));
    let mut ho = HoState::Connected;
    let mut rlf = RlfMonitor::default();
    let mut phase = Phase::Idle;
    let mut events = Vec::new();
    let mut trace = Vec::new();
    let mut counts = RouteCounts::default();

    let ev = |t_ms, kind, from, to| MobilityEvent {
        t_ms,
        route_id,
        kind,
        cell_from: from,
        cell_to: to,
    };

    for (k, s) in samples.iter().enumerate() {
        let t = s.t_ms;
        if k > 0 {
            for (f, &m) in filtered.iter_mut().zip(&raw[k]) {
                *f = (1.0 - a) * *f + a * m;
            }
        }

        if let Some(th) = thr.as_mut() {
            let vals =
                threshold_values(th.metric(), &filtered, cfg.interference_activity, noise_lin);
            if th.evaluate(&vals, t) {
                counts.threshold_reports += 1;
                events.push(ev(t, EventKind::ThresholdReport, None, None));
            }
        }

        let serving = match phase {
            Phase::Idle => {
                let c = argmax_lowest(&raw[k]);
                events.push(ev(t, EventKind::CellSelected, None, Some(c)));
                phase = Phase::Attached(c);
                c
            }
            Phase::Reestablishing { until_ms } => {
                if t < until_ms {
                    if keep_trace {
                        trace.push(TraceSample {
                            route_id,
                            t_ms: t,
                            filtered_dbm: filtered.clone(),
                            serving: usize::MAX,
                            serving_sinr_db: f64::NAN,
                        });
                    }
                    continue;
                }
                let c = argmax_lowest(&raw[k]);
                events.push(ev(t, EventKind::CellSelected, None, Some(c)));
                phase = Phase::Attached(c);
                a3.rearm();
                rlf.reset();
                ho = HoState::Connected;
                c
            }
            Phase::Attached(c) => c,
        };

        lin.iter_mut()
            .zip(&raw[k])
            .for_each(|(l, &p)| *l = db_to_lin(p));
        let total: f64 = lin.iter().sum();
        let sinr = serving_sinr(&lin, total, serving, cfg.interference_activity, noise_lin);
        let mut current = serving;

        let report = if ho == HoState::Connected {
            let r = a3.evaluate(&filtered, serving, t);
            if let Some(target) = r {
                counts.reports += 1;
                events.push(ev(
                    t,
                    EventKind::ReportTriggered,
                    Some(serving),
                    Some(target),
                ));
            }
            r
        } else {
            None
        };
        let (next, out) = step_handover_fsm(ho, report, sinr, t, hc, cfg.rlf.qout_db)?;
        ho = next;
        match out {
            None => {}
            Some(HoOutput::CommandSent { target }) => {
                events.push(ev(
                    t,
                    EventKind::HandoverCommand,
                    Some(serving),
                    Some(target),
                ));
            }
            Some(HoOutput::Failure { target, .. }) => {
                counts.handover_failures += 1;
                events.push(ev(
                    t,
                    EventKind::HandoverFailure,
                    Some(serving),
                    Some(target),
                ));
            }
            Some(HoOutput::Complete { target }) => {
                counts.handovers += 1;
                events.push(ev(
                    t,
                    EventKind::HandoverComplete,
                    Some(serving),
                    Some(target),
                ));
                phase = Phase::Attached(target);
                current = target;
                a3.rearm();
                rlf.reset();
            }
        }

        let sinr_now = if current == serving {
            sinr
        } else {
            serving_sinr(&lin, total, current, cfg.interference_activity, noise_lin)
        };
        if rlf.step(sinr_now, t, &cfg.rlf) {
            counts.rlfs += 1;
            events.push(ev(t, EventKind::RlfDeclared, Some(current), None));
            phase = Phase::Reestablishing {
                until_ms: t + cfg.rlf.reestablishment_delay_ms,
            };
            ho = HoState::Connected;
        }

        if keep_trace {
            trace.push(TraceSample {
                route_id,
                t_ms: t,
                filtered_dbm: filtered.clone(),
                serving: current,
                serving_sinr_db: sinr_now,
            });
        }
    }

    let last = samples.last().expect("route has samples");
    counts.km_flown = last.dist_m / 1000.0;
    counts.duration_ms = last.t_ms;
    Ok(RouteOutput {
        events,
        trace,
        counts,
    })
}

/// Simulate every route independently and merge the event logs by
/// timestamp, then route id.
pub fn run_mobility_sim(
    net: &Network,
    routes: &[Trajectory],
    cfg: &MobilityConfig,
    seed: u64,
) -> Result<MobilityResult> {
    if routes.is_empty() {
        return Err(SimError::config(
            "experiment.mobility.routes",
            "at least one route is required",
        ));
    }
    cfg.validate()?;
    let seed = SeedSpec::new(seed);
    let outputs = routes
        .par_iter()
        .enumerate()
        .map(|(i, r)| simulate_route(net, r, i, cfg, &seed, i < cfg.trace_routes))
        .collect::<Result<Vec<_>>>()?;

    let mut result = MobilityResult::default();
    for out in outputs {
        result.events.extend(out.events);
        result.trace.extend(out.trace);
        let t = &mut result.totals;
        t.reports += out.counts.reports;
        t.threshold_reports += out.counts.threshold_reports;
        t.handovers += out.counts.handovers;
        t.handover_failures += out.counts.handover_failures;
        t.rlfs += out.counts.rlfs;
        t.km_flown += out.counts.km_flown;
        t.duration_ms += out.counts.duration_ms;
        result.per_route.push(out.counts);
    }
    // Stable: keeps per-route causal order for equal timestamps.
    result.events.sort_by_key(|e| (e.t_ms, e.route_id));
    Ok(result)
}

/// Straight routes of `length_m` starting uniformly in a disk of
/// `start_radius_m` around the origin, with uniform headings. Identical for
/// every height given the same seed, so ensembles at different heights fly
/// matched routes.
pub fn random_straight_routes(
    seed: u64,
    count: usize,
    length_m: f64,
    start_radius_m: f64,
    speed_mps: f64,
    height_m: f64,
    sample_dt_ms: u64,
) -> Vec<Trajectory> {
    let seed = SeedSpec::new(seed);
    (0..count)
        .map(|i| {
            let mut s = seed.stream(Purpose::RouteGeometry, i as u64, 0, 0);
            let r = start_radius_m * s.uniform().sqrt();
            let phi = 2.0 * std::f64::consts::PI * s.uniform();
            let head = 2.0 * std::f64::consts::PI * s.uniform();
            let start = [r * phi.cos(), r * phi.sin()];
            let end = [
                start[0] + length_m * head.cos(),
                start[1] + length_m * head.sin(),
            ];
            Trajectory {
                waypoints: vec![start, end],
                speed_mps,
                height_m,
                sample_dt_ms,
            }
        })
        .collect()
}

/// Shape of a sidelobe-escape trace: how far the initially selected cell's
/// filtered RSRP falls within any window, when RLF is first declared, and
/// whether any measurement report fired before it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EscapeShape {
    pub first_cell: usize,
    pub max_drop_db: f64,
    pub rlf_ms: Option<u64>,
    pub report_before_rlf: bool,
}

pub fn escape_shape(
    result: &MobilityResult,
    route_id: usize,
    window_ms: u64,
) -> Option<EscapeShape> {
    let first_cell = result
        .events
        .iter()
        .find(|e| e.route_id == route_id && e.kind == EventKind::CellSelected)?
        .cell_to?;
    let rlf_ms = result
        .events
        .iter()
        .find(|e| e.route_id == route_id && e.kind == EventKind::RlfDeclared)
        .map(|e| e.t_ms);
    let horizon = rlf_ms.unwrap_or(u64::MAX);
    let report_before_rlf = result.events.iter().any(|e| {
        e.route_id == route_id && e.kind == EventKind::ReportTriggered && e.t_ms <= horizon
    });
    let series: Vec<(u64, f64)> = result
        .trace
        .iter()
        .filter(|s| s.route_id == route_id && s.t_ms <= horizon)
        .map(|s| (s.t_ms, s.filtered_dbm[first_cell]))
        .collect();
    Some(EscapeShape {
        first_cell,
        max_drop_db: max_drop_within(&series, window_ms),
        rlf_ms,
        report_before_rlf,
    })
}

/// Largest `x(t1) - x(t2)` with `t1 <= t2 <= t1 + window`.
pub fn max_drop_within(series: &[(u64, f64)], window_ms: u64) -> f64 {
    let mut best = 0.0f64;
    for (i, &(t1, x1)) in series.iter().enumerate() {
        for &(t2, x2) in &series[i..] {
            if t2 > t1 + window_ms {
                break;
            }
            best = best.max(x1 - x2);
        }
    }
    best
}

/// Search parameters for a route that leaves a sidelobe coverage patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EscapeSearch {
    pub height_m: f64,
    pub speed_mps: f64,
    pub duration_ms: u64,
    pub sample_dt_ms: u64,
    pub half_width_m: f64,
    pub step_m: f64,
    pub headings: usize,
    pub min_drop_db: f64,
    pub window_ms: u64,
    pub rlf_after_ms: u64,
    pub rlf_before_ms: u64,
    pub target_rlf_ms: u64,
}

impl Default for EscapeSearch {
    fn default() -> Self {
        Self {
            height_m: 300.0,
            speed_mps: 30.0 / 3.6,
            duration_ms: 12_000,
            sample_dt_ms: 10,
            half_width_m: 500.0,
            step_m: 25.0,
            headings: 24,
            min_drop_db: 7.0,
            window_ms: 4000,
            rlf_after_ms: 4000,
            rlf_before_ms: 12_000,
            target_rlf_ms: 7000,
        }
    }
}

/// Scan start points and headings for a straight route whose serving cell
/// fades by `min_drop_db` within `window_ms` and which ends in RLF inside
/// the requested interval without any prior A3 report. Candidates are
/// pre-screened on the fading-off map; the survivors are simulated with the
/// full engine and the one with RLF closest to `target_rlf_ms` wins.
pub fn find_sidelobe_escape_route(
    net: &Network,
    cfg: &MobilityConfig,
    search: &EscapeSearch,
    seed: u64,
) -> Result<Option<Trajectory>> {
    let length = search.speed_mps * search.duration_ms as f64 / 1000.0;
    let n = (2.0 * search.half_width_m / search.step_m).floor() as usize + 1;
    let noise_lin = db_to_lin(net.noise_per_re_dbm());
    let mut candidates = Vec::new();
    for iy in 0..n {
        for ix in 0..n {
            let start = [
                -search.half_width_m + ix as f64 * search.step_m,
                -search.half_width_m + iy as f64 * search.step_m,
            ];
            for h in 0..search.headings {
                let phi = 2.0 * std::f64::consts::PI * h as f64 / search.headings as f64;
                let end = [start[0] + length * phi.cos(), start[1] + length * phi.sin()];
                candidates.push(Trajectory {
                    waypoints: vec![start, end],
                    speed_mps: search.speed_mps,
                    height_m: search.height_m,
                    sample_dt_ms: search.sample_dt_ms,
                });
            }
        }
    }

    // Coarse deterministic screen at 1 s resolution.
    let screened: Vec<Trajectory> = candidates
        .into_par_iter()
        .filter_map(|traj| {
            let coarse = Trajectory {
                sample_dt_ms: 1000,
                ..traj.clone()
            };
            let samples = build_route(&coarse).ok()?;
            let mut serving = None;
            let mut series = Vec::new();
            for s in &samples {
                let powers: Vec<f64> = net
                    .cells
                    .iter()
                    .map(|c| net.rx_power_expected_dbm(c, s.pos))
                    .collect::<Result<_>>()
                    .ok()?;
                let c = *serving.get_or_insert_with(|| argmax_lowest(&powers));
                let lin: Vec<f64> = powers.iter().map(|&p| db_to_lin(p)).collect();
                let total: f64 = lin.iter().sum();
                let sinr = serving_sinr(&lin, total, c, cfg.interference_activity, noise_lin);
                series.push((s.t_ms, powers[c], sinr));
            }
            let start_ok = series.iter().take(3).all(|&(_, _, q)| q > cfg.rlf.qout_db);
            let drop = max_drop_within(
                &series.iter().map(|&(t, p, _)| (t, p)).collect::<Vec<_>>(),
                search.window_ms,
            );
            (start_ok && drop >= search.min_drop_db).then_some(traj)
        })
        .collect();

    let mut best: Option<(u64, Trajectory)> = None;
    for traj in screened {
        let trace_cfg = MobilityConfig {
            trace_routes: 1,
            ..*cfg
        };
        let res = run_mobility_sim(net, std::slice::from_ref(&traj), &trace_cfg, seed)?;
        let Some(shape) = escape_shape(&res, 0, search.window_ms) else {
            continue;
        };
        let Some(rlf) = shape.rlf_ms else { continue };
        if shape.report_before_rlf
            || shape.max_drop_db < search.min_drop_db
            || rlf < search.rlf_after_ms
            || rlf > search.rlf_before_ms
        {
            continue;
        }
        let score = rlf.abs_diff(search.target_rlf_ms);
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, traj));
        }
    }
    Ok(best.map(|(_, t)| t))
}
