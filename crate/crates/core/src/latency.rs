//! TTI-level downlink simulation of periodic command-and-control traffic on
//! a dedicated PRB pool.
//!
//! Every 1 ms TTI each cell with queued data grants its whole pool to the
//! UE owning the oldest packet. The set of cells transmitting in that TTI
//! sets the interference seen by every granted UE, which in turn sets how
//! many bits get through, how long queues stay non-empty and therefore how
//! many cells transmit next time. Utilization is the fraction of cell-TTIs
//! with a grant.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::channel::{db_to_lin, lin_to_db, sample_link_state};
use crate::deployment::{horizontal_norm, Point3};
use crate::error::{Result, SimError};
use crate::radio::{argmax_lowest, Network};
use crate::stats::{percentiles, Purpose, SeedSpec};

/// Bits carried by one PRB over one TTI at 1 bit/s/Hz.
const PRB_HZ_TTI: f64 = 180_000.0 * 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    pub period_ms: u64,
    pub packet_bytes: u32,
    pub latency_bound_ms: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            period_ms: 100,
            packet_bytes: 1250,
            latency_bound_ms: 50.0,
        }
    }
}

impl TrafficConfig {
    pub fn packet_bits(&self) -> f64 {
        8.0 * self.packet_bytes as f64
    }

    pub fn rate_kbps(&self) -> f64 {
        self.packet_bits() / self.period_ms as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkAdaptation {
    pub efficiency_scale: f64,
    pub efficiency_cap_bps_hz: f64,
    pub min_sinr_db: f64,
}

impl Default for LinkAdaptation {
    fn default() -> Self {
        Self {
            efficiency_scale: 0.75,
            efficiency_cap_bps_hz: 4.8,
            min_sinr_db: -10.0,
        }
    }
}

/// Attenuated Shannon mapping from SINR to spectral efficiency.
pub fn link_adaptation_eff(sinr_db: f64, la: &LinkAdaptation) -> f64 {
    if !(sinr_db >= la.min_sinr_db) {
        return 0.0;
    }
    (la.efficiency_scale * (1.0 + db_to_lin(sinr_db)).log2()).min(la.efficiency_cap_bps_hz)
}

/// How a dropped UE picks its serving cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UeAssociation {
    /// Served by the cell whose sector it was dropped in.
    DropCell,
    /// Served by the strongest cell at its position.
    #[default]
    MaxRsrp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyScenario {
    pub ue_height_m: f64,
    pub ues_per_cell: usize,
    pub prb_pool: u32,
    pub sim_duration_ms: u64,
    /// Extra simulated time after `sim_duration_ms` during which traffic
    /// keeps flowing so late packets can complete. Not counted in utilization.
    pub drain_ms: u64,
    pub seed: u64,
    pub traffic: TrafficConfig,
    pub link_adaptation: LinkAdaptation,
    pub association: UeAssociation,
    pub min_drop_distance_m: f64,
}

impl LatencyScenario {
    pub fn validate(&self, system_prbs: u32) -> Result<()> {
        if self.prb_pool == 0 || self.prb_pool > system_prbs {
            return Err(SimError::config(
                "experiment.latency.prbs",
                format!("pool of {} PRBs outside 1..={system_prbs}", self.prb_pool),
            ));
        }
        if self.traffic.period_ms == 0 {
            return Err(SimError::config(
                "experiment.latency.traffic.period_ms",
                "must be > 0",
            ));
        }
        if self.sim_duration_ms < 10 * self.traffic.period_ms {
            return Err(SimError::config(
                "experiment.latency.duration_ms",
                format!(
                    "{} ms is shorter than 10 traffic periods ({} ms)",
                    self.sim_duration_ms,
                    10 * self.traffic.period_ms
                ),
            ));
        }
        if !(self.ue_height_m > 0.0) {
            return Err(SimError::config(
                "experiment.latency.heights_m",
                "UE height must be > 0",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UePlacement {
    pub ue_id: usize,
    pub drop_cell: usize,
    pub pos: Point3,
}

/// Drop `ues_per_cell` UEs uniformly in each cell's sector of its site
/// hexagon (a rhombus), at the scenario height.
pub fn drop_ues(net: &Network, sc: &LatencyScenario) -> Vec<UePlacement> {
    let seed = SeedSpec::new(sc.seed);
    let r = net.layout.isd_m / 3f64.sqrt();
    let mut out = Vec::with_capacity(net.cells.len() * sc.ues_per_cell);
    for cell in &net.cells {
        let [sx, sy] = net.layout.site_positions[cell.site_id];
        let (s1, c1) = (cell.bearing_deg - 60.0).to_radians().sin_cos();
        let (s2, c2) = (cell.bearing_deg + 60.0).to_radians().sin_cos();
        for k in 0..sc.ues_per_cell {
            let ue_id = cell.cell_id * sc.ues_per_cell + k;
            let mut s = seed.stream(Purpose::UeDrop, cell.cell_id as u64, ue_id as u64, 0);
            let (dx, dy) = loop {
                let u = s.uniform();
                let w = s.uniform();
                let dx = r * (u * c1 + w * c2);
                let dy = r * (u * s1 + w * s2);
                if dx.hypot(dy) >= sc.min_drop_distance_m {
                    break (dx, dy);
                }
            };
            out.push(UePlacement {
                ue_id,
                drop_cell: cell.cell_id,
                pos: [sx + dx, sy + dy, sc.ue_height_m],
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Packet {
    pub ue_id: usize,
    pub arrival_ms: u64,
    pub remaining_bits: f64,
    /// Arrived inside the measurement window.
    pub counted: bool,
}

/// FIFO packet queue of one cell.
#[derive(Debug, Clone, Default)]
pub struct CellQueue {
    pub packets: VecDeque<Packet>,
}

/// Full-pool grant for one TTI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grant {
    pub ue_id: usize,
    pub prbs: u32,
}

impl CellQueue {
    pub fn push(&mut self, p: Packet) {
        self.packets.push_back(p);
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }
}

/// The oldest queued packet's UE gets the entire pool; nothing queued means
/// the cell stays silent.
pub fn schedule_tti(queue: &CellQueue, prb_pool: u32) -> Option<Grant> {
    queue.packets.front().map(|p| Grant {
        ue_id: p.ue_id,
        prbs: prb_pool,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketRecord {
    pub ue_id: usize,
    pub cell_id: usize,
    pub arrival_ms: u64,
    /// `f64::INFINITY` when the packet was never delivered.
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyResult {
    pub packets: Vec<PacketRecord>,
    pub cell_utilization: Vec<f64>,
    pub utilization: f64,
    /// PDSCH SINR of every grant inside the measurement window.
    pub sinr_samples_db: Vec<f64>,
    pub offered: usize,
    pub delivered: usize,
    pub delivered_bits: f64,
    pub granted_capacity_bits: f64,
    pub ues: Vec<UePlacement>,
    pub serving: Vec<usize>,
}

impl LatencyResult {
    pub fn latencies(&self) -> Vec<f64> {
        self.packets.iter().map(|p| p.latency_ms).collect()
    }
}

pub fn run_latency_sim(net: &Network, sc: &LatencyScenario) -> Result<LatencyResult> {
    sc.validate(net.channel.system_prbs)?;
    let seed = SeedSpec::new(sc.seed);
    let ues = drop_ues(net, sc);
    let n_cells = net.cells.len();

    // Linear per-RE received power, row per UE.
    let mut rx = vec![0.0; ues.len() * n_cells];
    for ue in &ues {
        for cell in &net.cells {
            let d = net.displacement(cell, ue.pos);
            let link = sample_link_state(
                &seed,
                cell.cell_id,
                ue.ue_id,
                horizontal_norm(d),
                ue.pos[2],
                &net.channel,
            );
            rx[ue.ue_id * n_cells + cell.cell_id] =
                db_to_lin(net.rx_power_dbm(cell, ue.pos, &link)?);
        }
    }
    let serving: Vec<usize> = ues
        .iter()
        .map(|ue| match sc.association {
            UeAssociation::DropCell => ue.drop_cell,
            UeAssociation::MaxRsrp => {
                argmax_lowest(&rx[ue.ue_id * n_cells..(ue.ue_id + 1) * n_cells])
            }
        })
        .collect();
    let phase: Vec<u64> = ues
        .iter()
        .map(|ue| {
            seed.stream(
                Purpose::TrafficPhase,
                ue.drop_cell as u64,
                ue.ue_id as u64,
                0,
            )
            .below(sc.traffic.period_ms)
        })
        .collect();

    let noise = db_to_lin(net.noise_per_re_dbm());
    let bits_per_eff = sc.prb_pool as f64 * PRB_HZ_TTI;
    let packet_bits = sc.traffic.packet_bits();
    let end = sc.sim_duration_ms + sc.drain_ms;

    let mut queues = vec![CellQueue::default(); n_cells];
    let mut records: Vec<PacketRecord> = Vec::new();
    let mut record_of: Vec<VecDeque<usize>> = vec![VecDeque::new(); n_cells];
    let mut busy = vec![0u64; n_cells];
    let mut sinr_samples = Vec::new();
    let mut delivered_bits = 0.0;
    let mut capacity_bits = 0.0;
    let mut grants: Vec<(usize, Grant)> = Vec::with_capacity(n_cells);

    for t in 0..end {
        let in_window = t < sc.sim_duration_ms;
        for ue in &ues {
            let ph = phase[ue.ue_id];
            if t >= ph && (t - ph).is_multiple_of(sc.traffic.period_ms) {
                let cell = serving[ue.ue_id];
                queues[cell].push(Packet {
                    ue_id: ue.ue_id,
                    arrival_ms: t,
                    remaining_bits: packet_bits,
                    counted: in_window,
                });
                if in_window {
                    record_of[cell].push_back(records.len());
                    records.push(PacketRecord {
                        ue_id: ue.ue_id,
                        cell_id: cell,
                        arrival_ms: t,
                        latency_ms: f64::INFINITY,
                    });
                }
            }
        }

        // (a) independent per-cell grants
        grants.clear();
        grants.extend(
            queues
                .iter()
                .enumerate()
                .filter_map(|(c, q)| schedule_tti(q, sc.prb_pool).map(|g| (c, g))),
        );

        // (b) SINR against the frozen set of transmitting cells
        for &(cell, grant) in &grants {
            let row = &rx[grant.ue_id * n_cells..(grant.ue_id + 1) * n_cells];
            let interference: f64 = grants
                .iter()
                .filter(|(c, _)| *c != cell)
                .map(|(c, _)| row[*c])
                .sum();
            let sinr_db = lin_to_db(row[cell] / (interference + noise));
            let bits = link_adaptation_eff(sinr_db, &sc.link_adaptation) * bits_per_eff;

            if in_window {
                busy[cell] += 1;
                sinr_samples.push(sinr_db);
            }
            let head = queues[cell]
                .packets
                .front_mut()
                .ok_or_else(|| SimError::Internal("grant without a queued packet".into()))?;
            if in_window {
                capacity_bits += bits;
                delivered_bits += bits.min(head.remaining_bits);
            }
            head.remaining_bits -= bits;
            if head.remaining_bits <= 1e-9 {
                let done = queues[cell].packets.pop_front().expect("head exists");
                if done.counted {
                    let idx = record_of[cell]
                        .pop_front()
                        .ok_or_else(|| SimError::Internal("packet record missing".into()))?;
                    records[idx].latency_ms = (t + 1 - done.arrival_ms) as f64;
                }
            }
        }
    }

    let window = sc.sim_duration_ms as f64;
    let cell_utilization: Vec<f64> = busy.iter().map(|&b| b as f64 / window).collect();
    let utilization = cell_utilization.iter().sum::<f64>() / n_cells.max(1) as f64;
    let delivered = records.iter().filter(|r| r.latency_ms.is_finite()).count();
    Ok(LatencyResult {
        offered: records.len(),
        delivered,
        packets: records,
        cell_utilization,
        utilization,
        sinr_samples_db: sinr_samples,
        delivered_bits,
        granted_capacity_bits: capacity_bits,
        ues,
        serving,
    })
}

pub const SUMMARY_PERCENTILES: [f64; 7] = [5.0, 10.0, 25.0, 50.0, 75.0, 90.0, 95.0];

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyCdf {
    pub fraction_within_bound: f64,
    /// (p, value) pairs, nearest-rank.
    pub percentiles: Vec<(f64, f64)>,
}

impl LatencyCdf {
    pub fn at(&self, p: f64) -> Option<f64> {
        self.percentiles
            .iter()
            .find(|(q, _)| *q == p)
            .map(|(_, v)| *v)
    }
}

pub fn latency_cdf(samples: &[f64], bound_ms: f64) -> Result<LatencyCdf> {
    if samples.is_empty() {
        return Err(SimError::Empty("latency CDF needs at least one sample"));
    }
    let within = samples.iter().filter(|&&s| s <= bound_ms).count();
    let values = percentiles(samples, &SUMMARY_PERCENTILES)?;
    Ok(LatencyCdf {
        fraction_within_bound: within as f64 / samples.len() as f64,
        percentiles: SUMMARY_PERCENTILES.iter().copied().zip(values).collect(),
    })
}
