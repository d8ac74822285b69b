//! Constellation propagation, ground terminals and link geometry.
//!
//! Spherical Earth, circular Keplerian orbits, no perturbations. Angles are
//! degrees at every public boundary and radians internally. Satellites are
//! propagated in an inertial frame and rotated into Earth-fixed coordinates;
//! ground terminals are static in the Earth-fixed frame.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ALTITUDE_MIN_KM: f64 = 1015.0;
pub const ALTITUDE_MAX_KM: f64 = 1325.0;
pub const EARTH_RADIUS_KM: f64 = 6378.137;
pub const EARTH_MU: f64 = 3.986_004_418e14;
pub const EARTH_ROTATION_RATE: f64 = 7.292_115_9e-5;

pub type Vec3 = [f64; 3];

pub(crate) fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn scale(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstellationConfig {
    pub num_planes: usize,
    pub sats_per_plane: usize,
    /// One altitude per plane. Left empty, altitudes are spread uniformly
    /// over the admissible band.
    #[serde(default)]
    pub plane_altitudes_km: Vec<f64>,
    pub inclination_deg: f64,
    pub raan_spacing_deg: f64,
    /// Extra argument-of-latitude shift applied per plane index.
    pub phase_offset_deg: f64,
    pub earth_radius_km: f64,
    /// Gravitational parameter, m^3/s^2.
    pub mu: f64,
    /// rad/s; zero gives an inertial "Earth-fixed" frame.
    pub earth_rotation_rate: f64,
    pub sim_duration_s: f64,
    pub num_snapshots: usize,
}

impl Default for ConstellationConfig {
    fn default() -> Self {
        let num_planes = 6;
        let sats_per_plane = 11;
        Self {
            num_planes,
            sats_per_plane,
            plane_altitudes_km: uniform_altitudes(num_planes),
            inclination_deg: 86.4,
            raan_spacing_deg: 180.0 / num_planes as f64,
            phase_offset_deg: 360.0 / (num_planes * sats_per_plane) as f64,
            earth_radius_km: EARTH_RADIUS_KM,
            mu: EARTH_MU,
            earth_rotation_rate: EARTH_ROTATION_RATE,
            sim_duration_s: 7200.0,
            num_snapshots: 1000,
        }
    }
}

/// Plane `p` gets `1015 + p * (1325 - 1015) / (P - 1)` km; a single plane sits
/// mid-band.
pub fn uniform_altitudes(num_planes: usize) -> Vec<f64> {
    if num_planes == 1 {
        return vec![0.5 * (ALTITUDE_MIN_KM + ALTITUDE_MAX_KM)];
    }
    let step = (ALTITUDE_MAX_KM - ALTITUDE_MIN_KM) / (num_planes - 1) as f64;
    (0..num_planes).map(|p| ALTITUDE_MIN_KM + p as f64 * step).collect()
}

impl ConstellationConfig {
    /// Fills derived fields so that the serialized form is explicit.
    pub fn canonicalize(&mut self) {
        if self.plane_altitudes_km.is_empty() {
            self.plane_altitudes_km = uniform_altitudes(self.num_planes);
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.num_planes < 1 {
            errs.push("constellation.num_planes must be >= 1".into());
        }
        if self.sats_per_plane < 1 {
            errs.push("constellation.sats_per_plane must be >= 1".into());
        }
        if self.num_snapshots < 1 {
            errs.push("constellation.num_snapshots must be >= 1".into());
        }
        if !self.plane_altitudes_km.is_empty() && self.plane_altitudes_km.len() != self.num_planes {
            errs.push(format!(
                "constellation.plane_altitudes_km has {} entries for {} planes",
                self.plane_altitudes_km.len(),
                self.num_planes
            ));
        }
        for (p, &alt) in self.plane_altitudes_km.iter().enumerate() {
            if !(ALTITUDE_MIN_KM..=ALTITUDE_MAX_KM).contains(&alt) {
                errs.push(format!(
                    "constellation.plane_altitudes_km[{p}] = {alt} outside [{ALTITUDE_MIN_KM}, {ALTITUDE_MAX_KM}]"
                ));
            }
        }
        if !(0.0..=180.0).contains(&self.inclination_deg) {
            errs.push("constellation.inclination_deg must lie in [0, 180]".into());
        }
        if !(self.earth_radius_km > 0.0) {
            errs.push("constellation.earth_radius_km must be positive".into());
        }
        if !(self.mu > 0.0) {
            errs.push("constellation.mu must be positive".into());
        }
        if !(self.sim_duration_s > 0.0) {
            errs.push("constellation.sim_duration_s must be positive".into());
        }
        errs
    }

    pub fn altitude_km(&self, plane: usize) -> f64 {
        if self.plane_altitudes_km.is_empty() {
            uniform_altitudes(self.num_planes)[plane]
        } else {
            self.plane_altitudes_km[plane]
        }
    }

    pub fn orbit_radius_m(&self, plane: usize) -> f64 {
        (self.earth_radius_km + self.altitude_km(plane)) * 1e3
    }

    /// Seconds between consecutive snapshots.
    pub fn snapshot_interval(&self) -> f64 {
        self.sim_duration_s / self.num_snapshots as f64
    }

    pub fn snapshot_time(&self, snapshot: usize) -> f64 {
        snapshot as f64 * self.snapshot_interval()
    }

    pub fn mean_motion(&self, plane: usize) -> f64 {
        let r = self.orbit_radius_m(plane);
        (self.mu / (r * r * r)).sqrt()
    }

    pub fn orbital_period(&self, plane: usize) -> f64 {
        2.0 * std::f64::consts::PI / self.mean_motion(plane)
    }

    pub fn num_satellites(&self) -> usize {
        self.num_planes * self.sats_per_plane
    }

    pub fn min_altitude_km(&self) -> f64 {
        (0..self.num_planes)
            .map(|p| self.altitude_km(p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_altitude_km(&self) -> f64 {
        (0..self.num_planes)
            .map(|p| self.altitude_km(p))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SatelliteState {
    pub plane_id: usize,
    /// Global satellite index, `plane_id * sats_per_plane + slot`.
    pub sat_id: usize,
    pub ecef_position: Vec3,
    /// Inertial velocity expressed in Earth-fixed axes.
    pub ecef_velocity: Vec3,
    /// Ground-track direction at the sub-satellite point, degrees clockwise
    /// from north, including the Earth's rotation.
    pub heading_deg: f64,
    pub snapshot: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeState {
    pub ue_id: usize,
    pub latitude: f64,
    pub longitude: f64,
    pub altitude: f64,
    pub ecef_position: Vec3,
}

impl UeState {
    pub fn new(ue_id: usize, latitude: f64, longitude: f64, altitude: f64, earth_radius_m: f64) -> Self {
        Self {
            ue_id,
            latitude,
            longitude,
            altitude,
            ecef_position: geodetic_to_ecef_with_radius(latitude, longitude, altitude, earth_radius_m),
        }
    }
}

/// Rectangular latitude/longitude region holding the ground terminals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roi {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Default for Roi {
    fn default() -> Self {
        Self {
            lat_min: 35.0,
            lat_max: 55.0,
            lon_min: 0.0,
            lon_max: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundConfig {
    pub num_ues: usize,
    pub roi: Roi,
    pub ue_altitude_m: f64,
    /// Minimum elevation for a link to count as visible, degrees.
    pub min_elevation_deg: f64,
}

impl Default for GroundConfig {
    fn default() -> Self {
        Self {
            num_ues: 50,
            roi: Roi::default(),
            ue_altitude_m: 0.0,
            min_elevation_deg: 10.0,
        }
    }
}

impl GroundConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let r = &self.roi;
        if self.num_ues < 1 {
            errs.push("ground.num_ues must be >= 1".into());
        }
        if !(-90.0..=90.0).contains(&r.lat_min) || !(-90.0..=90.0).contains(&r.lat_max) || r.lat_min >= r.lat_max {
            errs.push("ground.roi latitude bounds must satisfy -90 <= lat_min < lat_max <= 90".into());
        }
        if r.lon_min >= r.lon_max {
            errs.push("ground.roi longitude bounds must satisfy lon_min < lon_max".into());
        }
        if !(-90.0..90.0).contains(&self.min_elevation_deg) {
            errs.push("ground.min_elevation_deg must lie in [-90, 90)".into());
        }
        errs
    }
}

/// Places `num_ues` terminals uniformly in the ROI box.
pub fn deploy_ues<R: Rng>(cfg: &GroundConfig, earth_radius_km: f64, rng: &mut R) -> Vec<UeState> {
    let r = &cfg.roi;
    (0..cfg.num_ues)
        .map(|id| {
            let lat = rng.random_range(r.lat_min..=r.lat_max);
            let lon = rng.random_range(r.lon_min..=r.lon_max);
            UeState::new(id, lat, lon, cfg.ue_altitude_m, earth_radius_km * 1e3)
        })
        .collect()
}

pub fn geodetic_to_ecef(lat: f64, lon: f64, alt: f64) -> Vec3 {
    geodetic_to_ecef_with_radius(lat, lon, alt, EARTH_RADIUS_KM * 1e3)
}

pub fn geodetic_to_ecef_with_radius(lat: f64, lon: f64, alt: f64, earth_radius_m: f64) -> Vec3 {
    let (slat, clat) = lat.to_radians().sin_cos();
    let (slon, clon) = lon.to_radians().sin_cos();
    let r = earth_radius_m + alt;
    [r * clat * clon, r * clat * slon, r * slat]
}

/// Local east/north/up unit vectors at a point given by spherical lat/lon.
pub(crate) fn enu_basis(lat_rad: f64, lon_rad: f64) -> (Vec3, Vec3, Vec3) {
    let (slat, clat) = lat_rad.sin_cos();
    let (slon, clon) = lon_rad.sin_cos();
    let east = [-slon, clon, 0.0];
    let north = [-slat * clon, -slat * slon, clat];
    let up = [clat * clon, clat * slon, slat];
    (east, north, up)
}

fn inertial_state(cfg: &ConstellationConfig, plane: usize, slot: usize, t: f64) -> (Vec3, Vec3) {
    let r = cfg.orbit_radius_m(plane);
    let n = cfg.mean_motion(plane);
    let raan = (plane as f64 * cfg.raan_spacing_deg).to_radians();
    let inc = cfg.inclination_deg.to_radians();
    let u0 = (slot as f64 * 360.0 / cfg.sats_per_plane as f64 + plane as f64 * cfg.phase_offset_deg).to_radians();
    let u = u0 + n * t;
    let (so, co) = raan.sin_cos();
    let (si, ci) = inc.sin_cos();
    let (su, cu) = u.sin_cos();
    let pos = [r * (co * cu - so * su * ci), r * (so * cu + co * su * ci), r * su * si];
    let v = r * n;
    let vel = [
        v * (-co * su - so * cu * ci),
        v * (-so * su + co * cu * ci),
        v * cu * si,
    ];
    (pos, vel)
}

fn rotate_z(a: &Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    [c * a[0] - s * a[1], s * a[0] + c * a[1], a[2]]
}

fn ground_heading_deg(pos: &Vec3, vel: &Vec3, earth_rate: f64) -> f64 {
    // velocity relative to the rotating Earth
    let omega_cross_r = [-earth_rate * pos[1], earth_rate * pos[0], 0.0];
    let v_rel = sub(vel, &omega_cross_r);
    let r = norm(pos);
    let lat = (pos[2] / r).asin();
    let lon = pos[1].atan2(pos[0]);
    let (east, north, _) = enu_basis(lat, lon);
    let hd = dot(&v_rel, &east).atan2(dot(&v_rel, &north)).to_degrees();
    hd.rem_euclid(360.0)
}

/// States of every satellite at `snapshot`.
pub fn propagate(cfg: &ConstellationConfig, snapshot: usize) -> Result<Vec<SatelliteState>> {
    if snapshot >= cfg.num_snapshots {
        return Err(Error::Range {
            what: "snapshot",
            value: snapshot,
            limit: cfg.num_snapshots,
        });
    }
    Ok(propagate_at_time(cfg, cfg.snapshot_time(snapshot), snapshot))
}

/// States at an arbitrary epoch `t` seconds; `snapshot` is only a tag.
pub fn propagate_at_time(cfg: &ConstellationConfig, t: f64, snapshot: usize) -> Vec<SatelliteState> {
    let earth_angle = -cfg.earth_rotation_rate * t;
    let mut out = Vec::with_capacity(cfg.num_satellites());
    for plane in 0..cfg.num_planes {
        for slot in 0..cfg.sats_per_plane {
            let (pos_i, vel_i) = inertial_state(cfg, plane, slot, t);
            let pos = rotate_z(&pos_i, earth_angle);
            let vel = rotate_z(&vel_i, earth_angle);
            out.push(SatelliteState {
                plane_id: plane,
                sat_id: plane * cfg.sats_per_plane + slot,
                heading_deg: ground_heading_deg(&pos, &vel, cfg.earth_rotation_rate),
                ecef_position: pos,
                ecef_velocity: vel,
                snapshot,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LookAngles {
    pub azimuth: f64,
    pub elevation: f64,
    pub slant_range: f64,
}

/// Azimuth (clockwise from north), elevation above the local horizon and
/// range from the UE to the satellite.
pub fn look_angles(ue: &UeState, sat: &SatelliteState) -> Result<LookAngles> {
    let d = sub(&sat.ecef_position, &ue.ecef_position);
    let range = norm(&d);
    if range < 1e-6 {
        return Err(Error::DegenerateGeometry(format!(
            "satellite {} coincides with UE {}",
            sat.sat_id, ue.ue_id
        )));
    }
    let (east, north, up) = enu_basis(ue.latitude.to_radians(), ue.longitude.to_radians());
    let (e, n, u) = (dot(&d, &east), dot(&d, &north), dot(&d, &up));
    let elevation = (u / range).clamp(-1.0, 1.0).asin().to_degrees();
    let azimuth = e.atan2(n).to_degrees().rem_euclid(360.0);
    Ok(LookAngles {
        // rem_euclid can return 360.0 for tiny negative inputs
        azimuth: if azimuth >= 360.0 { 0.0 } else { azimuth },
        elevation,
        slant_range: range,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkGeometry {
    pub ue_id: usize,
    pub sat_id: usize,
    pub plane_id: usize,
    pub snapshot: usize,
    pub azimuth: f64,
    pub elevation: f64,
    pub slant_range: f64,
    pub sat_heading: f64,
}

/// Every UE–satellite pair whose elevation strictly exceeds `theta_min`.
/// Output is ordered by UE, then satellite.
pub fn visible_links(sats: &[SatelliteState], ues: &[UeState], theta_min: f64) -> Vec<LinkGeometry> {
    let mut links = Vec::new();
    for ue in ues {
        for sat in sats {
            let Ok(la) = look_angles(ue, sat) else { continue };
            if la.elevation > theta_min {
                links.push(LinkGeometry {
                    ue_id: ue.ue_id,
                    sat_id: sat.sat_id,
                    plane_id: sat.plane_id,
                    snapshot: sat.snapshot,
                    azimuth: la.azimuth,
                    elevation: la.elevation,
                    slant_range: la.slant_range,
                    sat_heading: sat.heading_deg,
                });
            }
        }
    }
    links
}

/// Largest slant range at elevation `theta_min_deg` for an orbit at `alt_m`.
pub fn max_slant_range(earth_radius_m: f64, alt_m: f64, theta_min_deg: f64) -> f64 {
    let s = theta_min_deg.to_radians().sin();
    let re = earth_radius_m;
    -re * s + (re * re * s * s + alt_m * alt_m + 2.0 * re * alt_m).sqrt()
}
