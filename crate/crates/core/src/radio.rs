//! Measurement sets (RSRP/RSRQ/RS-SINR), max-power association and
//! coverage/association rasters.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::antenna::CompositePattern;
use crate::antenna::{angles_from_displacement, composite_gain_db};
use crate::channel::{
    db_to_lin, lin_to_db, los_probability, pathloss_db, rx_power_per_re_dbm, sample_link_state,
    tx_power_per_re_dbm, ChannelParams, LinkState,
};
use crate::deployment::{horizontal_norm, norm3, Cell, Point3, SiteLayout};
use crate::error::{Result, SimError};
use crate::stats::SeedSpec;

/// Immutable scene shared by all engines.
#[derive(Debug, Clone)]
pub struct Network {
    pub layout: SiteLayout,
    pub cells: Vec<Cell>,
    pub pattern: CompositePattern,
    pub channel: ChannelParams,
}

impl Network {
    /// Displacement from the cell's BS to the UE, honoring wraparound.
    pub fn displacement(&self, cell: &Cell, ue: Point3) -> Point3 {
        self.layout
            .wrap_displacement(self.layout.site_pos3(cell.site_id), ue)
    }

    pub fn rx_power_dbm(&self, cell: &Cell, ue: Point3, link: &LinkState) -> Result<f64> {
        rx_power_per_re_dbm(
            cell,
            self.displacement(cell, ue),
            link,
            &self.pattern,
            &self.channel,
        )
    }

    /// Received power with no shadowing and pathloss averaged (in dB) over
    /// the LOS probability. Deterministic.
    pub fn rx_power_expected_dbm(&self, cell: &Cell, ue: Point3) -> Result<f64> {
        let d = self.displacement(cell, ue);
        let (az, el) = angles_from_displacement(cell.bearing_deg, d)?;
        let p_los = los_probability(horizontal_norm(d), ue[2], &self.channel);
        let d3 = norm3(d);
        let pl = p_los * pathloss_db(d3, true, &self.channel)
            + (1.0 - p_los) * pathloss_db(d3, false, &self.channel);
        Ok(
            tx_power_per_re_dbm(cell, &self.channel) + composite_gain_db(az, el, &self.pattern)
                - pl,
        )
    }

    pub fn noise_per_re_dbm(&self) -> f64 {
        self.channel.noise_per_re_dbm()
    }
}

/// Per-cell RSRP with a designated serving cell. `order` lists cell ids from
/// strongest to weakest; it defines N_1, N_2, ... relative to the serving cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    /// Indexed by cell id.
    pub rsrp_dbm: Vec<f64>,
    pub order: Vec<usize>,
    pub serving_cell_id: usize,
}

impl MeasurementSet {
    /// Build from per-cell powers; serving defaults to the strongest cell.
    pub fn from_rsrp(rsrp_dbm: Vec<f64>) -> Result<Self> {
        if rsrp_dbm.is_empty() {
            return Err(SimError::config(
                "cells",
                "measurement set needs at least one cell",
            ));
        }
        let mut order: Vec<usize> = (0..rsrp_dbm.len()).collect();
        order.sort_by(|&a, &b| rsrp_dbm[b].total_cmp(&rsrp_dbm[a]).then(a.cmp(&b)));
        let serving_cell_id = order[0];
        Ok(Self {
            rsrp_dbm,
            order,
            serving_cell_id,
        })
    }

    pub fn with_serving(mut self, cell_id: usize) -> Result<Self> {
        if cell_id >= self.rsrp_dbm.len() {
            return Err(SimError::config(
                "serving_cell",
                format!("cell {cell_id} not in set"),
            ));
        }
        self.serving_cell_id = cell_id;
        Ok(self)
    }

    pub fn strongest(&self) -> usize {
        self.order[0]
    }

    /// The k-th strongest cell other than the serving cell (k starts at 1).
    pub fn neighbor(&self, k: usize) -> Option<usize> {
        self.order
            .iter()
            .copied()
            .filter(|&c| c != self.serving_cell_id)
            .nth(k.checked_sub(1)?)
    }
}

pub fn measure_all(ue: Point3, net: &Network, links: &[LinkState]) -> Result<MeasurementSet> {
    if net.cells.is_empty() {
        return Err(SimError::config("cells", "no cells configured"));
    }
    if links.len() != net.cells.len() {
        return Err(SimError::config(
            "links",
            "one link state per cell is required",
        ));
    }
    let rsrp = net
        .cells
        .iter()
        .zip(links)
        .map(|(c, l)| net.rx_power_dbm(c, ue, l))
        .collect::<Result<Vec<_>>>()?;
    MeasurementSet::from_rsrp(rsrp)
}

fn check_activity(activity: &[f64], n: usize) -> Result<()> {
    if activity.len() != n {
        return Err(SimError::config(
            "activity",
            "one activity factor per cell is required",
        ));
    }
    if let Some(a) = activity.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(SimError::config("activity", format!("{a} outside [0,1]")));
    }
    Ok(())
}

/// RSRQ = N·S/RSSI over `n_prb_meas` PRBs. Serving activity is taken as 1.
pub fn rsrq_db(
    set: &MeasurementSet,
    activity: &[f64],
    n_prb_meas: u32,
    noise_per_re_dbm: f64,
) -> Result<f64> {
    check_activity(activity, set.rsrp_dbm.len())?;
    let n = n_prb_meas as f64;
    let mut rssi = 12.0 * n * db_to_lin(noise_per_re_dbm);
    for (c, &p) in set.rsrp_dbm.iter().enumerate() {
        let a = if c == set.serving_cell_id {
            1.0
        } else {
            activity[c]
        };
        rssi += 12.0 * n * db_to_lin(p) * a;
    }
    Ok(lin_to_db(
        n * db_to_lin(set.rsrp_dbm[set.serving_cell_id]) / rssi,
    ))
}

pub fn rs_sinr_db(set: &MeasurementSet, activity: &[f64], noise_per_re_dbm: f64) -> Result<f64> {
    check_activity(activity, set.rsrp_dbm.len())?;
    Ok(sinr_from_powers(
        &set.rsrp_dbm,
        set.serving_cell_id,
        |c| activity[c],
        noise_per_re_dbm,
    ))
}

pub(crate) fn sinr_from_powers(
    rsrp_dbm: &[f64],
    serving: usize,
    activity: impl Fn(usize) -> f64,
    noise_per_re_dbm: f64,
) -> f64 {
    let mut denom = db_to_lin(noise_per_re_dbm);
    for (c, &p) in rsrp_dbm.iter().enumerate() {
        if c != serving {
            denom += db_to_lin(p) * activity(c);
        }
    }
    lin_to_db(db_to_lin(rsrp_dbm[serving]) / denom)
}

/// Argmax of RSRP, lowest cell id on ties.
pub fn associate_max_power(set: &MeasurementSet) -> usize {
    argmax_lowest(&set.rsrp_dbm)
}

pub(crate) fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FadingMode {
    /// No shadowing; pathloss averaged over the LOS probability.
    #[default]
    Off,
    /// No shadowing; LOS when its probability is at least 0.5.
    Median,
    /// Seeded LOS and shadowing draws per (cell, grid point).
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Lower-left corner (x, y).
    pub origin: [f64; 2],
    pub spacing_m: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    /// Square grid of `n×n` points centered on the origin spanning
    /// `[-half_width, half_width]` in both axes.
    pub fn centered(half_width_m: f64, n: usize) -> Self {
        let spacing_m = if n > 1 {
            2.0 * half_width_m / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            origin: [-half_width_m, -half_width_m],
            spacing_m,
            nx: n,
            ny: n,
        }
    }

    pub fn point(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.origin[0] + ix as f64 * self.spacing_m,
            self.origin[1] + iy as f64 * self.spacing_m,
        ]
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-point max-power association on a raster. Index = `iy·nx + ix`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationMap {
    pub grid: GridSpec,
    pub height_m: f64,
    pub serving_cell: Vec<usize>,
    pub serving_site: Vec<usize>,
    pub rsrp_dbm: Vec<f64>,
    pub rs_sinr_db: Vec<f64>,
}

pub fn cell_powers_at(
    net: &Network,
    ue: Point3,
    mode: FadingMode,
    seed: &SeedSpec,
    ue_id: usize,
) -> Result<Vec<f64>> {
    net.cells
        .iter()
        .map(|c| match mode {
            FadingMode::Off => net.rx_power_expected_dbm(c, ue),
            FadingMode::Median => {
                let d = net.displacement(c, ue);
                let los = los_probability(horizontal_norm(d), ue[2], &net.channel) >= 0.5;
                net.rx_power_dbm(
                    c,
                    ue,
                    &LinkState {
                        los,
                        shadow_db: 0.0,
                    },
                )
            }
            FadingMode::Sampled => {
                let d = net.displacement(c, ue);
                let link = sample_link_state(
                    seed,
                    c.cell_id,
                    ue_id,
                    horizontal_norm(d),
                    ue[2],
                    &net.channel,
                );
                net.rx_power_dbm(c, ue, &link)
            }
        })
        .collect()
}

/// Max-power association and full-load RS-SINR at every grid point.
pub fn coverage_map(
    net: &Network,
    height_m: f64,
    grid: &GridSpec,
    mode: FadingMode,
    seed: &SeedSpec,
) -> Result<AssociationMap> {
    if grid.is_empty() {
        return Err(SimError::config(
            "experiment.map.grid",
            "grid has no points",
        ));
    }
    if net.cells.is_empty() {
        return Err(SimError::config("cells", "no cells configured"));
    }
    let noise = net.noise_per_re_dbm();
    let points: Vec<(usize, f64, f64)> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let (ix, iy) = (idx % grid.nx, idx / grid.nx);
            let [x, y] = grid.point(ix, iy);
            let powers = cell_powers_at(net, [x, y, height_m], mode, seed, idx)?;
            let best = argmax_lowest(&powers);
            let sinr = sinr_from_powers(&powers, best, |_| 1.0, noise);
            Ok((best, powers[best], sinr))
        })
        .collect::<Result<Vec<_>>>()?;
    let serving_cell: Vec<usize> = points.iter().map(|p| p.0).collect();
    Ok(AssociationMap {
        grid: *grid,
        height_m,
        serving_site: serving_cell.iter().map(|&c| net.cells[c].site_id).collect(),
        serving_cell,
        rsrp_dbm: points.iter().map(|p| p.1).collect(),
        rs_sinr_db: points.iter().map(|p| p.2).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FragmentationStats {
    pub non_nearest_fraction: f64,
    pub mean_serving_distance_m: f64,
    /// Number of 4-connected regions served by the same site.
    pub component_count: usize,
}

pub fn fragmentation_stats(map: &AssociationMap, layout: &SiteLayout) -> FragmentationStats {
    let g = &map.grid;
    let mut non_nearest = 0usize;
    let mut dist_sum = 0.0;
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            let idx = iy * g.nx + ix;
            let p = g.point(ix, iy);
            let site = map.serving_site[idx];
            if layout.nearest_site(p) != site {
                non_nearest += 1;
            }
            let d = layout.wrap_displacement(layout.site_pos3(site), [p[0], p[1], 0.0]);
            dist_sum += horizontal_norm(d);
        }
    }
    let n = g.len().max(1) as f64;
    FragmentationStats {
        non_nearest_fraction: non_nearest as f64 / n,
        mean_serving_distance_m: dist_sum / n,
        component_count: count_components(&map.serving_site, g.nx, g.ny),
    }
}

/// 4-connected components of equal labels on an `nx×ny` raster.
pub fn count_components(labels: &[usize], nx: usize, ny: usize) -> usize {
    let mut seen = vec![false; labels.len()];
    let mut stack = Vec::new();
    let mut count = 0;
    for start in 0..labels.len() {
        if seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % nx, i / nx);
            let mut visit = |j: usize| {
                if !seen[j] && labels[j] == labels[i] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < nx {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - nx);
            }
            if y + 1 < ny {
                visit(i + nx);
            }
        }
    }
    count
}
