//! Downlink channel: free-space path loss, elevation-dependent Rician fading
//! in the transmit array domain, AR(1) log-normal shadowing and thermal noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use num_complex::Complex64;

use crate::codebook::{array_gain_db, steering_from_cosines, ArrayVector, BeamCodebook, ARRAY_ELEMENTS};
use crate::error::{Error, Result};
use crate::orbit::{cross, dot, enu_basis, norm, scale, sub, LinkGeometry, UeState, Vec3};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub rx_gain_dbi: f64,
    pub noise_figure_db: f64,
    pub k_at_min_db: f64,
    pub k_at_zenith_db: f64,
    pub sigma_at_min_db: f64,
    pub sigma_at_zenith_db: f64,
    pub decorrelation_time_s: f64,
    /// Root of the channel substreams; filled from the master seed at run time.
    #[serde(skip)]
    pub rng_seed: u64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            carrier_freq_hz: 2e9,
            bandwidth_hz: 20e6,
            tx_power_dbm: 40.0,
            rx_gain_dbi: 5.0,
            noise_figure_db: 7.0,
            k_at_min_db: -2.0,
            k_at_zenith_db: 15.0,
            sigma_at_min_db: 4.0,
            sigma_at_zenith_db: 1.0,
            decorrelation_time_s: 30.0,
            rng_seed: 0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.carrier_freq_hz > 0.0) {
            errs.push("channel.carrier_freq_hz must be positive".into());
        }
        if !(self.bandwidth_hz > 0.0) {
            errs.push("channel.bandwidth_hz must be positive".into());
        }
        if !(self.k_at_zenith_db >= self.k_at_min_db) {
            errs.push("channel.k_at_zenith_db must be >= channel.k_at_min_db".into());
        }
        if !(self.sigma_at_zenith_db <= self.sigma_at_min_db) || self.sigma_at_zenith_db < 0.0 {
            errs.push("channel shadowing std must satisfy 0 <= sigma_at_zenith_db <= sigma_at_min_db".into());
        }
        if !(self.decorrelation_time_s > 0.0) {
            errs.push("channel.decorrelation_time_s must be positive".into());
        }
        errs
    }

    pub fn noise_power_dbm(&self) -> f64 {
        THERMAL_NOISE_DBM_PER_HZ + 10.0 * self.bandwidth_hz.log10() + self.noise_figure_db
    }
}

pub fn path_loss_db(distance: f64, freq: f64) -> Result<f64> {
    if !(distance > 0.0) || !(freq > 0.0) {
        return Err(Error::Domain(format!(
            "path loss needs positive distance and frequency, got d={distance}, f={freq}"
        )));
    }
    Ok(20.0 * (4.0 * std::f64::consts::PI * distance * freq / SPEED_OF_LIGHT).log10())
}

fn elevation_interp(elevation: f64, theta_min: f64, at_min: f64, at_zenith: f64) -> f64 {
    let w = ((elevation - theta_min) / (90.0 - theta_min)).clamp(0.0, 1.0);
    at_min + w * (at_zenith - at_min)
}

/// Rician K in dB, linear in elevation between `theta_min` and zenith.
pub fn rician_k_db(elevation: f64, params: &ChannelParams, theta_min: f64) -> Result<f64> {
    if elevation < theta_min || elevation > 90.0 {
        return Err(Error::Domain(format!(
            "elevation {elevation} outside [{theta_min}, 90]"
        )));
    }
    Ok(elevation_interp(
        elevation,
        theta_min,
        params.k_at_min_db,
        params.k_at_zenith_db,
    ))
}

/// Shadowing standard deviation in dB, interpolated like the K-factor.
pub fn shadowing_sigma_db(elevation: f64, params: &ChannelParams, theta_min: f64) -> f64 {
    elevation_interp(elevation, theta_min, params.sigma_at_min_db, params.sigma_at_zenith_db)
}

/// First value of a fresh shadowing track.
pub fn shadowing_init<R: Rng>(elevation: f64, params: &ChannelParams, theta_min: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    shadowing_sigma_db(elevation, params, theta_min) * z
}

/// One AR(1) step: `rho * prev + sigma * sqrt(1 - rho^2) * z`, `rho = exp(-dt / tau)`.
pub fn shadowing_step<R: Rng>(
    prev: f64,
    dt: f64,
    elevation: f64,
    params: &ChannelParams,
    theta_min: f64,
    rng: &mut R,
) -> f64 {
    let rho = (-dt / params.decorrelation_time_s).exp();
    let z: f64 = rng.sample(StandardNormal);
    rho * prev + shadowing_sigma_db(elevation, params, theta_min) * (1.0 - rho * rho).sqrt() * z
}

/// Link geometry as stored with each sample. Everything the channel needs
/// is recomputed from these values, so a stored dataset can be replayed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoredGeometry {
    pub sin_az: f64,
    pub cos_az: f64,
    pub elevation_deg: f64,
    pub slant_range: f64,
    pub sin_heading: f64,
    pub cos_heading: f64,
    pub ue_latitude_deg: f64,
    /// Distance of the UE from the Earth's centre, meters.
    pub ue_radius: f64,
}

impl StoredGeometry {
    pub fn from_link(link: &LinkGeometry, ue: &UeState, earth_radius_m: f64) -> Self {
        let (sin_az, cos_az) = link.azimuth.to_radians().sin_cos();
        let (sin_heading, cos_heading) = link.sat_heading.to_radians().sin_cos();
        Self {
            sin_az,
            cos_az,
            elevation_deg: link.elevation,
            slant_range: link.slant_range,
            sin_heading,
            cos_heading,
            ue_latitude_deg: ue.latitude,
            ue_radius: earth_radius_m + ue.altitude,
        }
    }
}

/// Direction cosines of the UE as seen from the satellite, in the beam frame
/// (x along the ground track, z toward nadir, y = z × x).
pub fn beam_frame_cosines(g: &StoredGeometry) -> (f64, f64) {
    // Longitude is irrelevant by symmetry about the polar axis.
    let (east, north, up) = enu_basis(g.ue_latitude_deg.to_radians(), 0.0);
    let (se, ce) = g.elevation_deg.to_radians().sin_cos();
    let ue = scale(&up, g.ue_radius);
    let los: Vec3 = [
        ce * g.sin_az * east[0] + ce * g.cos_az * north[0] + se * up[0],
        ce * g.sin_az * east[1] + ce * g.cos_az * north[1] + se * up[1],
        ce * g.sin_az * east[2] + ce * g.cos_az * north[2] + se * up[2],
    ];
    let sat = [
        ue[0] + g.slant_range * los[0],
        ue[1] + g.slant_range * los[1],
        ue[2] + g.slant_range * los[2],
    ];
    cosines_in_beam_frame(&sat, &ue, g.sin_heading, g.cos_heading)
}

pub(crate) fn cosines_in_beam_frame(sat: &Vec3, ue: &Vec3, sin_hd: f64, cos_hd: f64) -> (f64, f64) {
    let rs = norm(sat);
    let r_hat = scale(sat, 1.0 / rs);
    let (east_s, north_s, _) = enu_basis(r_hat[2].clamp(-1.0, 1.0).asin(), r_hat[1].atan2(r_hat[0]));
    let x_b = [
        cos_hd * north_s[0] + sin_hd * east_s[0],
        cos_hd * north_s[1] + sin_hd * east_s[1],
        cos_hd * north_s[2] + sin_hd * east_s[2],
    ];
    let z_b = scale(&r_hat, -1.0);
    let y_b = cross(&z_b, &x_b);
    let d = sub(ue, sat);
    let dir = scale(&d, 1.0 / norm(&d));
    (dot(&dir, &x_b), dot(&dir, &y_b))
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Rician channel toward beam-frame direction cosines `(u, v)` with linear
/// K-factor `k`. Always consumes the same number of draws from `rng`.
pub fn sample_channel_toward<R: Rng>(u: f64, v: f64, k: f64, spacing: f64, rng: &mut R) -> ArrayVector {
    let los = steering_from_cosines(u, v, spacing);
    let std = (0.5 / ARRAY_ELEMENTS as f64).sqrt();
    let (w_los, w_nlos) = if k.is_infinite() {
        (1.0, 0.0)
    } else {
        ((k / (k + 1.0)).sqrt(), (1.0 / (k + 1.0)).sqrt())
    };
    std::array::from_fn(|i| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        los[i] * w_los + Complex64::new(re * std, im * std) * w_nlos
    })
}

/// Channel realization for a visible link.
pub fn sample_channel<R: Rng>(
    geometry: &StoredGeometry,
    codebook: &BeamCodebook,
    params: &ChannelParams,
    theta_min: f64,
    rng: &mut R,
) -> Result<ArrayVector> {
    let k = db_to_linear(rician_k_db(geometry.elevation_deg, params, theta_min)?);
    let (u, v) = beam_frame_cosines(geometry);
    Ok(sample_channel_toward(u, v, k, codebook.element_spacing, rng))
}

/// Per-beam SNR in dB.
pub fn snr_per_beam_db(
    slant_range: f64,
    h: &ArrayVector,
    shadowing_db: f64,
    codebook: &BeamCodebook,
    params: &ChannelParams,
) -> Result<Vec<f64>> {
    let common = params.tx_power_dbm + params.rx_gain_dbi - path_loss_db(slant_range, params.carrier_freq_hz)?
        + shadowing_db
        - params.noise_power_dbm();
    codebook
        .weights
        .iter()
        .map(|w| Ok(array_gain_db(w, h)? + common))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{build_codebook, norm_sqr};
    use crate::orbit::{geodetic_to_ecef, look_angles, propagate, ConstellationConfig, SatelliteState};
    use crate::seed::substream;
    use approx::assert_abs_diff_eq;

    #[test]
    fn path_loss_reference_values() {
        let f = 2e9;
        let d0 = SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * f);
        assert_abs_diff_eq!(path_loss_db(d0, f).unwrap(), 0.0, epsilon = 1e-12);
        // closed form: 20 log10(4 pi 1.2e6 2e9 / c)
        let expected = 20.0 * (4.0 * std::f64::consts::PI * 1.2e6 * 2e9 / 299_792_458.0_f64).log10();
        assert_abs_diff_eq!(path_loss_db(1.2e6, f).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(path_loss_db(1.2e6, f).unwrap(), 160.04, epsilon = 0.015);
        let step = path_loss_db(2.4e6, f).unwrap() - path_loss_db(1.2e6, f).unwrap();
        assert_abs_diff_eq!(step, 6.0206, epsilon = 1e-4);
        assert!(path_loss_db(0.0, f).is_err());
        assert!(path_loss_db(1.0, -1.0).is_err());
    }

    #[test]
    fn k_factor_endpoints() {
        let p = ChannelParams::default();
        assert_eq!(rician_k_db(90.0, &p, 10.0).unwrap(), 15.0);
        assert_eq!(rician_k_db(10.0, &p, 10.0).unwrap(), -2.0);
        assert_abs_diff_eq!(rician_k_db(50.0, &p, 10.0).unwrap(), 6.5, epsilon = 1e-12);
        assert!(rician_k_db(9.0, &p, 10.0).is_err());
        let mut last_k = f64::NEG_INFINITY;
        let mut last_s = f64::INFINITY;
        for e in 10..=90 {
            let k = rician_k_db(e as f64, &p, 10.0).unwrap();
            let s = shadowing_sigma_db(e as f64, &p, 10.0);
            assert!(k >= last_k && s <= last_s);
            last_k = k;
            last_s = s;
        }
    }

    #[test]
    fn shadowing_limits() {
        let mut p = ChannelParams::default();
        let mut rng = substream(1, "t", &[]);
        p.decorrelation_time_s = f64::INFINITY;
        assert_eq!(shadowing_step(2.5, 7.2, 30.0, &p, 10.0, &mut rng), 2.5);

        // dt >> tau: the previous value is forgotten
        p.decorrelation_time_s = 1e-3;
        let n = 20_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| shadowing_step(100.0, 7.2, 10.0, &p, 10.0, &mut rng))
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.15);
        assert!((var / 16.0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn shadowing_chain_statistics() {
        // Monte-Carlo oracle: lag-1 autocorrelation exp(-0.24) and variance sigma^2.
        let p = ChannelParams::default();
        let mut rng = substream(2, "t", &[]);
        let dt = 0.24 * p.decorrelation_time_s;
        let mut x = shadowing_init(10.0, &p, 10.0, &mut rng);
        let n = 10_000;
        let mut xs = Vec::with_capacity(n);
        for _ in 0..n {
            xs.push(x);
            x = shadowing_step(x, dt, 10.0, &p, 10.0, &mut rng);
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let cov = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (n - 1) as f64;
        assert!((cov / var - (-0.24f64).exp()).abs() < 0.03, "rho {}", cov / var);
        assert!((var / 16.0 - 1.0).abs() < 0.15, "var {var}");
    }

    #[test]
    fn channel_limits_and_normalization() {
        let mut rng = substream(3, "t", &[]);
        let h = sample_channel_toward(0.3, -0.2, f64::INFINITY, 0.5, &mut rng);
        let a = steering_from_cosines(0.3, -0.2, 0.5);
        assert_eq!(h, a);

        let n = 10_000;
        let mean = (0..n)
            .map(|_| norm_sqr(&sample_channel_toward(0.1, 0.1, 0.0, 0.5, &mut rng)))
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");

        let mean = (0..n)
            .map(|_| norm_sqr(&sample_channel_toward(0.1, 0.1, 3.16, 0.5, &mut rng)))
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");

        let h1 = sample_channel_toward(0.1, 0.2, 5.0, 0.5, &mut substream(9, "f", &[1]));
        let h2 = sample_channel_toward(0.1, 0.2, 5.0, 0.5, &mut substream(9, "f", &[1]));
        assert_eq!(h1, h2);
    }

    #[test]
    fn link_budget_reference() {
        let cb = build_codebook(4, 4, 100.0, 100.0);
        let p = ChannelParams::default();
        assert_abs_diff_eq!(p.noise_power_dbm(), -174.0 + 73.0103 + 7.0, epsilon = 1e-4);
        // boresight LoS: beam-frame direction (0, 0) lies between the four
        // central beams, so use a codebook with a boresight beam.
        let cb1 = build_codebook(1, 1, 100.0, 100.0);
        let h = steering_from_cosines(0.0, 0.0, 0.5);
        let snr = snr_per_beam_db(1.2e6, &h, 0.0, &cb1, &p).unwrap();
        let expected = 40.0 + 10.0 * 16f64.log10() + 5.0 - path_loss_db(1.2e6, 2e9).unwrap() - p.noise_power_dbm();
        assert_abs_diff_eq!(snr[0], expected, epsilon = 1e-12);
        assert_abs_diff_eq!(snr[0], -9.0, epsilon = 0.025);

        let mut rng = substream(4, "t", &[]);
        let h = sample_channel_toward(0.4, 0.1, 3.0, 0.5, &mut rng);
        let a = snr_per_beam_db(1.5e6, &h, 0.0, &cb, &p).unwrap();
        let b = snr_per_beam_db(1.5e6, &h, 3.0, &cb, &p).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(y - x, 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn snr_argmax_is_gain_argmax() {
        let cb = build_codebook(4, 4, 100.0, 100.0);
        let p = ChannelParams::default();
        let mut rng = substream(5, "t", &[]);
        for i in 0..500 {
            let u = (i as f64 * 0.37).sin() * 0.8;
            let v = (i as f64 * 0.91).cos() * 0.5;
            let h = sample_channel_toward(u, v, 2.0, 0.5, &mut rng);
            let snr = snr_per_beam_db(1.0e6 + i as f64 * 1e3, &h, (i as f64).sin() * 4.0, &cb, &p).unwrap();
            let argmax = snr
                .iter()
                .enumerate()
                .fold(0, |b, (j, &s)| if s > snr[b] { j } else { b });
            assert_eq!(argmax, cb.best_beam(&h));
        }
    }

    #[test]
    fn stored_geometry_reconstructs_beam_frame() {
        // Oracle: beam-frame cosines straight from Earth-fixed vectors.
        let cfg = ConstellationConfig::default();
        let re = cfg.earth_radius_km * 1e3;
        let ue = UeState::new(3, 47.3, 12.9, 0.0, re);
        let mut checked = 0;
        for t in (0..1000).step_by(7) {
            let sats: Vec<SatelliteState> = propagate(&cfg, t).unwrap();
            for sat in &sats {
                let la = look_angles(&ue, sat).unwrap();
                if la.elevation <= 10.0 {
                    continue;
                }
                let link = LinkGeometry {
                    ue_id: 3,
                    sat_id: sat.sat_id,
                    plane_id: sat.plane_id,
                    snapshot: t,
                    azimuth: la.azimuth,
                    elevation: la.elevation,
                    slant_range: la.slant_range,
                    sat_heading: sat.heading_deg,
                };
                let g = StoredGeometry::from_link(&link, &ue, re);
                let (u, v) = beam_frame_cosines(&g);
                let (sh, ch) = sat.heading_deg.to_radians().sin_cos();
                let (u0, v0) = cosines_in_beam_frame(&sat.ecef_position, &geodetic_to_ecef(47.3, 12.9, 0.0), sh, ch);
                assert_abs_diff_eq!(u, u0, epsilon = 1e-9);
                assert_abs_diff_eq!(v, v0, epsilon = 1e-9);
                assert!(u * u + v * v <= 1.0);
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn nadir_link_points_to_boresight() {
        let g = StoredGeometry {
            sin_az: 0.0,
            cos_az: 1.0,
            elevation_deg: 90.0,
            slant_range: 1.2e6,
            sin_heading: 0.3f64.sin(),
            cos_heading: 0.3f64.cos(),
            ue_latitude_deg: 40.0,
            ue_radius: 6_378_137.0,
        };
        let (u, v) = beam_frame_cosines(&g);
        assert_abs_diff_eq!(u, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
    }
}
