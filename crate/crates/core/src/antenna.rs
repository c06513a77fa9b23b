//! Base-station antenna: parabolic element pattern times a vertical
//! uniform linear array factor with electrical downtilt.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::deployment::{Cell, Point3};
use crate::error::{Result, SimError};

/// Floor applied to the normalized array factor so exact nulls stay finite.
pub const ARRAY_FACTOR_FLOOR_DB: f64 = -50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElementPattern {
    pub gmax_dbi: f64,
    pub hpbw_az_deg: f64,
    pub hpbw_el_deg: f64,
    /// Azimuth attenuation floor (front-to-back ratio).
    pub front_back_db: f64,
    /// Elevation sidelobe attenuation floor.
    pub sla_db: f64,
}

impl Default for ElementPattern {
    fn default() -> Self {
        Self {
            gmax_dbi: 8.0,
            hpbw_az_deg: 65.0,
            hpbw_el_deg: 65.0,
            front_back_db: 30.0,
            sla_db: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    pub m_elements: u32,
    /// Element spacing in wavelengths.
    pub spacing_wl: f64,
    /// Electrical steering angle below the horizon.
    pub downtilt_deg: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            m_elements: 16,
            spacing_wl: 0.8,
            downtilt_deg: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompositePattern {
    pub element: ElementPattern,
    pub array: ArrayConfig,
}

impl CompositePattern {
    pub fn validate(&self) -> Result<()> {
        let e = &self.element;
        if !e.gmax_dbi.is_finite() {
            return Err(SimError::config(
                "antenna.element.gmax_dbi",
                "must be finite",
            ));
        }
        if !(e.hpbw_az_deg > 0.0) || !(e.hpbw_el_deg > 0.0) {
            return Err(SimError::config(
                "antenna.element",
                "beamwidths must be > 0",
            ));
        }
        if !(e.front_back_db > 0.0) || !(e.sla_db > 0.0) {
            return Err(SimError::config(
                "antenna.element",
                "attenuation floors must be > 0",
            ));
        }
        let a = &self.array;
        if a.m_elements < 1 {
            return Err(SimError::config("antenna.array.m_elements", "must be >= 1"));
        }
        if !(a.spacing_wl > 0.0) {
            return Err(SimError::config("antenna.array.spacing_wl", "must be > 0"));
        }
        if !(0.0..90.0).contains(&a.downtilt_deg) {
            return Err(SimError::config(
                "antenna.array.downtilt_deg",
                "must be in [0, 90)",
            ));
        }
        Ok(())
    }

    /// Lowest value `composite_gain_db` can return.
    pub fn gain_floor_dbi(&self) -> f64 {
        self.element.gmax_dbi - self.element.front_back_db - 20.0
    }

    pub fn peak_gain_dbi(&self) -> f64 {
        self.element.gmax_dbi + 10.0 * (self.array.m_elements as f64).log10()
    }
}

pub fn element_gain_db(az_rel_deg: f64, el_rel_deg: f64, p: &ElementPattern) -> f64 {
    let horiz = (12.0 * (az_rel_deg / p.hpbw_az_deg).powi(2)).min(p.front_back_db);
    let vert = (12.0 * (el_rel_deg / p.hpbw_el_deg).powi(2)).min(p.sla_db);
    p.gmax_dbi - (horiz + vert).min(p.front_back_db)
}

/// Normalized array power gain `|Σ e^{jmψ}|²/M` in dB, floored at
/// [`ARRAY_FACTOR_FLOOR_DB`]. Peak is `10·log10(M)` at `el = -downtilt`.
pub fn array_factor_db(el_rel_deg: f64, a: &ArrayConfig) -> f64 {
    let m = a.m_elements as f64;
    let psi = 2.0
        * PI
        * a.spacing_wl
        * (el_rel_deg.to_radians().sin() + a.downtilt_deg.to_radians().sin());
    // Geometric sum in closed form: sin²(Mψ/2)/sin²(ψ/2), limit M² at ψ = 2πk.
    let half = 0.5 * psi;
    let den = half.sin();
    let power = if den.abs() < 1e-9 {
        m * m
    } else {
        let num = (m * half).sin();
        (num * num) / (den * den)
    };
    let db = 10.0 * (power / m).log10();
    if db.is_finite() {
        db.max(ARRAY_FACTOR_FLOOR_DB)
    } else {
        ARRAY_FACTOR_FLOOR_DB
    }
}

/// Element pattern (vertical cut centered on the tilted boresight) plus the
/// array factor, floored at `gmax - front_back - 20` dBi. The peak,
/// `gmax + 10·log10(M)`, is at `(0, -downtilt)`.
pub fn composite_gain_db(az_rel_deg: f64, el_rel_deg: f64, c: &CompositePattern) -> f64 {
    let g = element_gain_db(az_rel_deg, el_rel_deg + c.array.downtilt_deg, &c.element)
        + array_factor_db(el_rel_deg, &c.array);
    g.max(c.gain_floor_dbi())
}

/// Angles of a BS→UE displacement relative to the cell's boresight.
/// Elevation is positive above the horizon.
pub fn angles_from_displacement(bearing_deg: f64, d: Point3) -> Result<(f64, f64)> {
    let horiz = d[0].hypot(d[1]);
    if horiz == 0.0 && d[2] == 0.0 {
        return Err(SimError::DegenerateGeometry(
            "BS and UE positions coincide".into(),
        ));
    }
    let az_abs = if horiz == 0.0 {
        bearing_deg
    } else {
        d[1].atan2(d[0]).to_degrees()
    };
    let az_rel = wrap_deg(az_abs - bearing_deg);
    let el_rel = d[2].atan2(horiz).to_degrees();
    Ok((az_rel, el_rel))
}

pub fn link_angles(cell: &Cell, bs_pos: Point3, ue_pos: Point3) -> Result<(f64, f64)> {
    let d = [
        ue_pos[0] - bs_pos[0],
        ue_pos[1] - bs_pos[1],
        ue_pos[2] - bs_pos[2],
    ];
    angles_from_displacement(cell.bearing_deg, d)
}

/// Wrap an angle to [-180, 180].
pub fn wrap_deg(a: f64) -> f64 {
    let w = (a + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 && a > 0.0 {
        180.0
    } else {
        w
    }
}
