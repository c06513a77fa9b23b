//! Hexagonal multi-site, tri-sector deployment geometry.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

pub type Point3 = [f64; 3];

/// Site grid: a hexagon of `rings` rings around a center site.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteLayout {
    pub isd_m: f64,
    pub rings: u32,
    /// Ground positions, center first then ring by ring counterclockwise from +x.
    pub site_positions: Vec<[f64; 2]>,
    pub bs_height_m: f64,
    pub wraparound: bool,
}

/// One sector of one site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub cell_id: usize,
    pub site_id: usize,
    pub sector_index: usize,
    pub bearing_deg: f64,
    pub tx_power_dbm: f64,
}

pub fn site_count(rings: u32) -> usize {
    let r = rings as usize;
    1 + 3 * r * (r + 1)
}

// Axial lattice basis: unit vectors at 30° and 90°, scaled by the ISD.
fn lattice_point(isd: f64, i: i64, j: i64) -> [f64; 2] {
    let (s30, c30) = 30f64.to_radians().sin_cos();
    [isd * (i as f64) * c30, isd * ((i as f64) * s30 + j as f64)]
}

fn hex_distance(i: i64, j: i64) -> i64 {
    (i.abs() + j.abs() + (i + j).abs()) / 2
}

fn angle_deg_0_360(p: [f64; 2]) -> f64 {
    let a = p[1].atan2(p[0]).to_degrees();
    let a = if a < 0.0 { a + 360.0 } else { a };
    // Snap values like 359.9999999 back to 0 so ordering starts at +x.
    if (a - 360.0).abs() < 1e-9 {
        0.0
    } else {
        a
    }
}

/// Build a hexagonal layout with `1 + 3·rings·(rings+1)` sites.
pub fn build_hex_layout(isd_m: f64, rings: u32, bs_height_m: f64) -> Result<SiteLayout> {
    if !(isd_m > 0.0) || !isd_m.is_finite() {
        return Err(SimError::config(
            "layout.isd_m",
            format!("must be > 0, got {isd_m}"),
        ));
    }
    if !bs_height_m.is_finite() || bs_height_m < 0.0 {
        return Err(SimError::config(
            "layout.bs_height_m",
            format!("must be >= 0, got {bs_height_m}"),
        ));
    }
    let r = rings as i64;
    let mut site_positions = vec![[0.0, 0.0]];
    for ring in 1..=r {
        let mut ring_pts: Vec<[f64; 2]> = Vec::new();
        for i in -ring..=ring {
            for j in -ring..=ring {
                if hex_distance(i, j) == ring {
                    ring_pts.push(lattice_point(isd_m, i, j));
                }
            }
        }
        ring_pts.sort_by(|a, b| angle_deg_0_360(*a).total_cmp(&angle_deg_0_360(*b)));
        site_positions.extend(ring_pts);
    }
    Ok(SiteLayout {
        isd_m,
        rings,
        site_positions,
        bs_height_m,
        wraparound: false,
    })
}

impl SiteLayout {
    pub fn with_wraparound(mut self, on: bool) -> Self {
        self.wraparound = on;
        self
    }

    pub fn num_sites(&self) -> usize {
        self.site_positions.len()
    }

    pub fn site_pos3(&self, site_id: usize) -> Point3 {
        let [x, y] = self.site_positions[site_id];
        [x, y, self.bs_height_m]
    }

    /// The six translation vectors that tile the plane with copies of this
    /// cluster. Their norm is `isd·sqrt(num_sites)`.
    pub fn wrap_shifts(&self) -> [[f64; 2]; 6] {
        let r = self.rings as i64;
        let base = lattice_point(self.isd_m, 2 * r + 1, -r);
        let mut out = [[0.0; 2]; 6];
        for (k, s) in out.iter_mut().enumerate() {
            let (sn, cs) = (60.0 * k as f64).to_radians().sin_cos();
            *s = [base[0] * cs - base[1] * sn, base[0] * sn + base[1] * cs];
        }
        out
    }

    /// Displacement from `p` to `q`. With wraparound on, the minimum-norm
    /// displacement over `q` and its six mirror images.
    pub fn wrap_displacement(&self, p: Point3, q: Point3) -> Point3 {
        let direct = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
        if !self.wraparound {
            return direct;
        }
        let mut best = direct;
        let mut best_n2 = direct[0] * direct[0] + direct[1] * direct[1];
        for s in self.wrap_shifts() {
            let d = [direct[0] + s[0], direct[1] + s[1], direct[2]];
            let n2 = d[0] * d[0] + d[1] * d[1];
            if n2 < best_n2 {
                best = d;
                best_n2 = n2;
            }
        }
        best
    }

    /// Map a ground point into the cluster's fundamental region by repeated
    /// shifts. No-op when wraparound is off.
    pub fn wrap_position(&self, q: [f64; 2]) -> [f64; 2] {
        if !self.wraparound {
            return q;
        }
        let shifts = self.wrap_shifts();
        let mut cur = q;
        loop {
            let n0 = cur[0] * cur[0] + cur[1] * cur[1];
            let mut best = None;
            let mut best_n2 = n0;
            for s in &shifts {
                let c = [cur[0] + s[0], cur[1] + s[1]];
                let n2 = c[0] * c[0] + c[1] * c[1];
                if n2 < best_n2 - 1e-9 {
                    best = Some(c);
                    best_n2 = n2;
                }
            }
            match best {
                Some(c) => cur = c,
                None => return cur,
            }
        }
    }

    /// Geometrically nearest site to a ground point (lowest id on ties).
    pub fn nearest_site(&self, q: [f64; 2]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for s in 0..self.num_sites() {
            let d = self.wrap_displacement(self.site_pos3(s), [q[0], q[1], 0.0]);
            let d2 = d[0] * d[0] + d[1] * d[1];
            if d2 < best_d - 1e-9 {
                best = s;
                best_d = d2;
            }
        }
        best
    }
}

/// Three cells per site; `cell_id = 3·site_id + sector_index`.
pub fn sectorize(
    layout: &SiteLayout,
    base_bearings: [f64; 3],
    tx_power_dbm: f64,
) -> Result<Vec<Cell>> {
    let norm: Vec<f64> = base_bearings.iter().map(|b| b.rem_euclid(360.0)).collect();
    for a in 0..3 {
        if !norm[a].is_finite() {
            return Err(SimError::config(
                "layout.bearings_deg",
                "bearing must be finite",
            ));
        }
        for b in (a + 1)..3 {
            if (norm[a] - norm[b]).abs() < 1e-9 {
                return Err(SimError::config(
                    "layout.bearings_deg",
                    format!("duplicate bearing {}", norm[a]),
                ));
            }
        }
    }
    let mut cells = Vec::with_capacity(3 * layout.num_sites());
    for site_id in 0..layout.num_sites() {
        for (sector_index, &bearing_deg) in norm.iter().enumerate() {
            cells.push(Cell {
                cell_id: 3 * site_id + sector_index,
                site_id,
                sector_index,
                bearing_deg,
                tx_power_dbm,
            });
        }
    }
    Ok(cells)
}

/// Ground-plane distance between two points of a displacement.
pub fn horizontal_norm(d: Point3) -> f64 {
    d[0].hypot(d[1])
}

pub fn norm3(d: Point3) -> f64 {
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}
