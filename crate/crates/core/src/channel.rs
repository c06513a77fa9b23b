//! Height-dependent propagation: LOS probability, two-regime log-distance
//! pathloss, height-dependent shadowing, and per-RE received power.

use serde::{Deserialize, Serialize};

use crate::antenna::{angles_from_displacement, composite_gain_db, CompositePattern};
use crate::deployment::{norm3, Cell, Point3};
use crate::error::{Result, SimError};
use crate::stats::{Purpose, SeedSpec};

/// Pathloss `alpha + beta·log10(d) + 20·log10(fc)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathlossCoeffs {
    pub alpha_db: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    pub fc_ghz: f64,
    pub los_always_height_m: f64,
    pub losprob_scale_m: f64,
    pub pl_los: PathlossCoeffs,
    pub pl_nlos: PathlossCoeffs,
    pub sf_sigma0_db: f64,
    pub sf_decay_per_m: f64,
    pub sf_sigma_min_db: f64,
    pub sf_decorrelation_m: f64,
    pub noise_psd_dbm_hz: f64,
    pub noise_figure_db: f64,
    pub subcarrier_hz: f64,
    pub system_prbs: u32,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            fc_ghz: 2.0,
            los_always_height_m: 100.0,
            losprob_scale_m: 50.0,
            pl_los: PathlossCoeffs {
                alpha_db: 28.0,
                beta: 22.0,
            },
            pl_nlos: PathlossCoeffs {
                alpha_db: 22.4,
                beta: 36.0,
            },
            sf_sigma0_db: 6.0,
            sf_decay_per_m: 0.01,
            sf_sigma_min_db: 2.0,
            sf_decorrelation_m: 50.0,
            noise_psd_dbm_hz: -174.0,
            noise_figure_db: 9.0,
            subcarrier_hz: 15_000.0,
            system_prbs: 50,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.fc_ghz > 0.0) {
            return Err(SimError::config("channel.fc_ghz", "must be > 0"));
        }
        if !(self.pl_los.beta > 0.0) {
            return Err(SimError::config("channel.pl_los.beta", "must be > 0"));
        }
        if !(self.pl_nlos.beta > 0.0) {
            return Err(SimError::config("channel.pl_nlos.beta", "must be > 0"));
        }
        if !(self.los_always_height_m > 0.0) || !(self.losprob_scale_m > 0.0) {
            return Err(SimError::config(
                "channel",
                "LOS height and scale must be > 0",
            ));
        }
        if self.sf_sigma0_db < 0.0 || self.sf_sigma_min_db < 0.0 {
            return Err(SimError::config("channel", "shadowing sigmas must be >= 0"));
        }
        if self.sf_sigma_min_db > self.sf_sigma0_db {
            return Err(SimError::config(
                "channel.sf_sigma_min_db",
                "must not exceed sf_sigma0_db",
            ));
        }
        if !(self.sf_decorrelation_m > 0.0) {
            return Err(SimError::config(
                "channel.sf_decorrelation_m",
                "must be > 0",
            ));
        }
        if self.system_prbs == 0 {
            return Err(SimError::config("channel.system_prbs", "must be >= 1"));
        }
        Ok(())
    }

    /// Thermal noise per resource element (one subcarrier).
    pub fn noise_per_re_dbm(&self) -> f64 {
        self.noise_psd_dbm_hz + self.noise_figure_db + 10.0 * self.subcarrier_hz.log10()
    }

    pub fn n_re_total(&self) -> f64 {
        12.0 * self.system_prbs as f64
    }
}

pub fn los_probability(d2d_m: f64, h_ut_m: f64, p: &ChannelParams) -> f64 {
    if h_ut_m >= p.los_always_height_m {
        return 1.0;
    }
    let scale = p.losprob_scale_m * (1.0 + h_ut_m / p.los_always_height_m);
    let excess = (d2d_m - scale).max(0.0);
    (-excess / scale).exp().min(1.0)
}

/// Pathloss in dB. Distances below 1 m are clamped to 1 m.
pub fn pathloss_db(d3d_m: f64, los: bool, p: &ChannelParams) -> f64 {
    let c = if los { p.pl_los } else { p.pl_nlos };
    c.alpha_db + c.beta * d3d_m.max(1.0).log10() + 20.0 * p.fc_ghz.log10()
}

pub fn shadow_sigma_db(h_ut_m: f64, los: bool, p: &ChannelParams) -> f64 {
    let s = p
        .sf_sigma_min_db
        .max(p.sf_sigma0_db * (-p.sf_decay_per_m * h_ut_m).exp());
    if los {
        s
    } else {
        1.5 * s
    }
}

/// LOS state and shadowing of one BS–UE link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    pub los: bool,
    pub shadow_db: f64,
}

impl LinkState {
    pub const CLEAR_LOS: LinkState = LinkState {
        los: true,
        shadow_db: 0.0,
    };
}

/// Draw the link state for `(cell_id, ue_id)`; a pure function of the seed
/// and ids, so repeated calls agree.
pub fn sample_link_state(
    seed: &SeedSpec,
    cell_id: usize,
    ue_id: usize,
    d2d_m: f64,
    h_ut_m: f64,
    p: &ChannelParams,
) -> LinkState {
    let u = seed
        .stream(Purpose::LinkLos, cell_id as u64, ue_id as u64, 0)
        .uniform();
    let los = u < los_probability(d2d_m, h_ut_m, p);
    let sigma = shadow_sigma_db(h_ut_m, los, p);
    let shadow_db = if sigma > 0.0 {
        sigma
            * seed
                .stream(Purpose::LinkShadow, cell_id as u64, ue_id as u64, 0)
                .gaussian()
    } else {
        0.0
    };
    LinkState { los, shadow_db }
}

pub fn tx_power_per_re_dbm(cell: &Cell, p: &ChannelParams) -> f64 {
    cell.tx_power_dbm - 10.0 * p.n_re_total().log10()
}

/// Per-RE received power given a BS→UE displacement (already wrapped).
pub fn rx_power_per_re_dbm(
    cell: &Cell,
    displacement: Point3,
    link: &LinkState,
    pattern: &CompositePattern,
    p: &ChannelParams,
) -> Result<f64> {
    let (az, el) = angles_from_displacement(cell.bearing_deg, displacement)?;
    let gain = composite_gain_db(az, el, pattern);
    let pl = pathloss_db(norm3(displacement), link.los, p);
    Ok(tx_power_per_re_dbm(cell, p) + gain - pl - link.shadow_db)
}

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn lin_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}
