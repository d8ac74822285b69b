//! Labelled dataset generation, per-plane partitioning and persistence.
//!
//! One sample is emitted per visible UE–satellite link per snapshot. The
//! label is the exhaustive-search argmax of the per-beam SNR. Everything the
//! channel draws is keyed by `(ue, sat, snapshot)` or `(ue, sat, track start)`
//! so a stored dataset can be replayed bit-for-bit from its sidecar.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    beam_frame_cosines, sample_channel, shadowing_init, shadowing_step, snr_per_beam_db, ChannelParams, StoredGeometry,
};
use crate::codebook::{ArrayVector, BeamCodebook, CodebookConfig};
use crate::error::{Error, Result};
use crate::nn::ModelKind;
use crate::orbit::{
    deploy_ues, max_slant_range, propagate, visible_links, ConstellationConfig, GroundConfig, LinkGeometry, Roi,
    UeState,
};
use crate::seed::{derive_seed, fnv1a64, substream};

pub const NUM_FEATURES: usize = 8;
pub const GNN_NODE_FEATURES: usize = 4;

pub const CSV_HEADER: [&str; 16] = [
    "plane_id",
    "ue_id",
    "sat_id",
    "snapshot",
    "elevation_deg",
    "slant_range_m",
    "best_snr_db",
    "label",
    "f0",
    "f1",
    "f2",
    "f3",
    "f4",
    "f5",
    "f6",
    "f7",
];

/// Everything that determines the generated data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub constellation: ConstellationConfig,
    pub ground: GroundConfig,
    pub channel: ChannelParams,
    pub codebook: CodebookConfig,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.constellation.validate();
        errs.extend(self.ground.validate());
        errs.extend(self.channel.validate());
        errs.extend(self.codebook.validate());
        errs
    }

    /// FNV-1a of the canonical TOML form, combined with the seed.
    pub fn hash(&self, seed: u64) -> u64 {
        let mut canon = self.clone();
        canon.constellation.canonicalize();
        let text = toml::to_string(&canon).expect("scenario serializes");
        fnv1a64(format!("{text}\nseed = {seed}\n").as_bytes())
    }
}

/// Normalization constants for the link feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub range_min_m: f64,
    pub range_max_m: f64,
    pub roi: Roi,
}

impl FeatureScaling {
    pub fn for_scenario(sc: &ScenarioConfig) -> Self {
        let re = sc.constellation.earth_radius_km * 1e3;
        let min_alt = sc.constellation.min_altitude_km() * 1e3 - sc.ground.ue_altitude_m;
        let max_alt = sc.constellation.max_altitude_km() * 1e3 - sc.ground.ue_altitude_m;
        Self {
            range_min_m: min_alt,
            range_max_m: max_slant_range(re + sc.ground.ue_altitude_m, max_alt, sc.ground.min_elevation_deg),
            roi: sc.ground.roi,
        }
    }

    pub fn normalized_range(&self, range: f64) -> f64 {
        ((range - self.range_min_m) / (self.range_max_m - self.range_min_m)).clamp(-1.0, 1.0)
    }
}

fn unit_interval_to_symmetric(x: f64, lo: f64, hi: f64) -> f64 {
    (2.0 * (x - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
}

/// `[sin az, cos az, sin elev, range, sin heading, cos heading, lat, lon]`,
/// with range and UE position normalized.
pub fn extract_features(link: &LinkGeometry, ue: &UeState, scaling: &FeatureScaling) -> [f64; NUM_FEATURES] {
    let (sa, ca) = link.azimuth.to_radians().sin_cos();
    let (sh, ch) = link.sat_heading.to_radians().sin_cos();
    [
        sa,
        ca,
        link.elevation.to_radians().sin(),
        scaling.normalized_range(link.slant_range),
        sh,
        ch,
        unit_interval_to_symmetric(ue.latitude, scaling.roi.lat_min, scaling.roi.lat_max),
        unit_interval_to_symmetric(ue.longitude, scaling.roi.lon_min, scaling.roi.lon_max),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: [f64; NUM_FEATURES],
    pub label: usize,
    pub plane_id: usize,
    pub ue_id: usize,
    pub sat_id: usize,
    pub snapshot: usize,
    pub elevation: f64,
    pub slant_range: f64,
    pub best_snr: f64,
}

impl Sample {
    /// Geometry in the form the channel consumes, rebuilt from stored fields.
    pub fn stored_geometry(&self, ue: &UeState, earth_radius_m: f64) -> StoredGeometry {
        StoredGeometry {
            sin_az: self.features[0],
            cos_az: self.features[1],
            elevation_deg: self.elevation,
            slant_range: self.slant_range,
            sin_heading: self.features[4],
            cos_heading: self.features[5],
            ue_latitude_deg: ue.latitude,
            ue_radius: earth_radius_m + ue.altitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(with = "crate::seed::hex_u64")]
    pub config_hash: u64,
    #[serde(with = "crate::seed::hex_u64")]
    pub seed: u64,
    pub n_beams: usize,
    pub n_az: usize,
    pub n_el: usize,
    pub num_snapshots: usize,
    pub num_planes: usize,
    pub snapshot_interval_s: f64,
    pub min_elevation_deg: f64,
    pub earth_radius_m: f64,
    pub scaling: FeatureScaling,
    /// Beam steering offsets `(az, el)` in degrees.
    pub steer_offsets: Vec<(f64, f64)>,
    pub generated_unix_s: u64,
    pub ues: Vec<UeState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub meta: DatasetMeta,
}

/// Exhaustive beam search over the per-beam SNR; ties go to the lower index.
pub fn label_link(
    slant_range: f64,
    h: &ArrayVector,
    shadowing_db: f64,
    codebook: &BeamCodebook,
    params: &ChannelParams,
) -> Result<(usize, Vec<f64>)> {
    let snr = snr_per_beam_db(slant_range, h, shadowing_db, codebook, params)?;
    Ok((argmax_lowest(&snr), snr))
}

pub(crate) fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

struct Track {
    last_snapshot: usize,
    shadowing: f64,
    rng: ChaCha8Rng,
}

/// Sequential shadowing state for every `(ue, sat)` pair. A track that
/// skips a snapshot restarts with a fresh substream keyed by its start.
struct TrackBook<'a> {
    tracks: HashMap<(usize, usize), Track>,
    params: &'a ChannelParams,
    theta_min: f64,
    dt: f64,
}

impl<'a> TrackBook<'a> {
    fn new(params: &'a ChannelParams, theta_min: f64, dt: f64) -> Self {
        Self {
            tracks: HashMap::new(),
            params,
            theta_min,
            dt,
        }
    }

    fn advance(&mut self, ue: usize, sat: usize, snapshot: usize, elevation: f64) -> f64 {
        let (params, theta_min, dt) = (self.params, self.theta_min, self.dt);
        match self.tracks.get_mut(&(ue, sat)) {
            Some(tr) if tr.last_snapshot + 1 == snapshot => {
                tr.shadowing = shadowing_step(tr.shadowing, dt, elevation, params, theta_min, &mut tr.rng);
                tr.last_snapshot = snapshot;
                tr.shadowing
            }
            _ => {
                let mut rng = substream(params.rng_seed, "shadowing", &[ue as u64, sat as u64, snapshot as u64]);
                let shadowing = shadowing_init(elevation, params, theta_min, &mut rng);
                self.tracks.insert(
                    (ue, sat),
                    Track {
                        last_snapshot: snapshot,
                        shadowing,
                        rng,
                    },
                );
                shadowing
            }
        }
    }
}

fn fading_rng(params: &ChannelParams, ue: usize, sat: usize, snapshot: usize) -> ChaCha8Rng {
    substream(params.rng_seed, "fading", &[ue as u64, sat as u64, snapshot as u64])
}

/// Channel parameters with the substream root derived from `seed`.
pub fn seeded_channel(params: &ChannelParams, seed: u64) -> ChannelParams {
    ChannelParams {
        rng_seed: derive_seed(seed, "channel", &[]),
        ..params.clone()
    }
}

pub fn generate(scenario: &ScenarioConfig, seed: u64) -> Result<Dataset> {
    let errs = scenario.validate();
    if !errs.is_empty() {
        return Err(Error::Validation(errs));
    }
    let mut sc = scenario.clone();
    sc.constellation.canonicalize();
    let cons = &sc.constellation;
    let theta_min = sc.ground.min_elevation_deg;
    let re = cons.earth_radius_km * 1e3;
    let ues = deploy_ues(
        &sc.ground,
        cons.earth_radius_km,
        &mut substream(seed, "ue-placement", &[]),
    );
    let codebook = sc.codebook.build();
    let params = seeded_channel(&sc.channel, seed);
    let scaling = FeatureScaling::for_scenario(&sc);
    let mut book = TrackBook::new(&params, theta_min, cons.snapshot_interval());

    let mut samples = Vec::new();
    for t in 0..cons.num_snapshots {
        let sats = propagate(cons, t)?;
        for link in visible_links(&sats, &ues, theta_min) {
            let ue = &ues[link.ue_id];
            let features = extract_features(&link, ue, &scaling);
            let mut sample = Sample {
                features,
                label: 0,
                plane_id: link.plane_id,
                ue_id: link.ue_id,
                sat_id: link.sat_id,
                snapshot: t,
                elevation: link.elevation,
                slant_range: link.slant_range,
                best_snr: 0.0,
            };
            let geom = sample.stored_geometry(ue, re);
            let h = sample_channel(
                &geom,
                &codebook,
                &params,
                theta_min,
                &mut fading_rng(&params, link.ue_id, link.sat_id, t),
            )?;
            let shadowing = book.advance(link.ue_id, link.sat_id, t, link.elevation);
            let (label, snr) = label_link(link.slant_range, &h, shadowing, &codebook, &params)?;
            sample.label = label;
            sample.best_snr = snr[label];
            samples.push(sample);
        }
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let generated_unix_s = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(Dataset {
        samples,
        meta: DatasetMeta {
            config_hash: sc.hash(seed),
            seed,
            n_beams: codebook.len(),
            n_az: codebook.n_az,
            n_el: codebook.n_el,
            num_snapshots: cons.num_snapshots,
            num_planes: cons.num_planes,
            snapshot_interval_s: cons.snapshot_interval(),
            min_elevation_deg: theta_min,
            earth_radius_m: re,
            scaling,
            steer_offsets: codebook.steer_offsets.clone(),
            generated_unix_s,
            ues,
        },
    })
}

/// Recomputes `(label, best_snr)` for every sample from its stored geometry,
/// the sidecar metadata and the channel configuration.
pub fn replay_labels(ds: &Dataset, channel: &ChannelParams, codebook: &CodebookConfig) -> Result<Vec<(usize, f64)>> {
    let cb = codebook.build();
    let params = seeded_channel(channel, ds.meta.seed);
    let theta_min = ds.meta.min_elevation_deg;
    let mut book = TrackBook::new(&params, theta_min, ds.meta.snapshot_interval_s);
    ds.samples
        .iter()
        .map(|s| {
            let ue = &ds.meta.ues[s.ue_id];
            let geom = s.stored_geometry(ue, ds.meta.earth_radius_m);
            let h = sample_channel(
                &geom,
                &cb,
                &params,
                theta_min,
                &mut fading_rng(&params, s.ue_id, s.sat_id, s.snapshot),
            )?;
            let shadowing = book.advance(s.ue_id, s.sat_id, s.snapshot, s.elevation);
            let (label, snr) = label_link(s.slant_range, &h, shadowing, &cb, &params)?;
            Ok((label, snr[label]))
        })
        .collect()
}

/// Per-beam node features for the graph model: angular offsets of the link
/// direction from each beam's steering direction (radians), sin(elevation)
/// and normalized range. Row-major `n_beams × 4`.
pub fn node_features(sample: &Sample, meta: &DatasetMeta, out: &mut [f64]) {
    let ue = &meta.ues[sample.ue_id];
    let (u, v) = beam_frame_cosines(&sample.stored_geometry(ue, meta.earth_radius_m));
    let az = u.clamp(-1.0, 1.0).asin();
    let el = v.clamp(-1.0, 1.0).asin();
    for (b, &(beam_az, beam_el)) in meta.steer_offsets.iter().enumerate() {
        let row = &mut out[b * GNN_NODE_FEATURES..(b + 1) * GNN_NODE_FEATURES];
        row[0] = az - beam_az.to_radians();
        row[1] = el - beam_el.to_radians();
        row[2] = sample.features[2];
        row[3] = sample.features[3];
    }
}

/// Model input rows for the selected samples: the link feature vector for
/// the dense model, flattened per-beam node features for the graph model.
pub fn design_matrix(ds: &Dataset, indices: &[usize], kind: ModelKind) -> Array2<f64> {
    match kind {
        ModelKind::Mlp => {
            let mut x = Array2::zeros((indices.len(), NUM_FEATURES));
            for (mut row, &i) in x.rows_mut().into_iter().zip(indices) {
                row.assign(&ArrayView1::from(&ds.samples[i].features));
            }
            x
        }
        ModelKind::Gnn => {
            let width = ds.meta.n_beams * GNN_NODE_FEATURES;
            let mut x = Array2::zeros((indices.len(), width));
            for (mut row, &i) in x.rows_mut().into_iter().zip(indices) {
                node_features(&ds.samples[i], &ds.meta, row.as_slice_mut().expect("standard layout"));
            }
            x
        }
    }
}

/// Labels for the selected samples.
pub fn labels_of(ds: &Dataset, indices: &[usize]) -> Vec<usize> {
    indices.iter().map(|&i| ds.samples[i].label).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// The last snapshots form the test set.
    Temporal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub plane_id: usize,
    /// Indices into `Dataset::samples`.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// First snapshot of the test window: the final `ceil(fraction * T)` snapshots.
pub fn test_start_snapshot(num_snapshots: usize, test_fraction: f64) -> usize {
    let n_test = (test_fraction * num_snapshots as f64 - 1e-9).ceil().max(0.0) as usize;
    num_snapshots.saturating_sub(n_test)
}

/// Groups samples by orbital plane and splits each group in time.
/// Planes without samples are dropped and reported in the second element.
pub fn partition(ds: &Dataset, test_fraction: f64, mode: SplitMode) -> Result<(Vec<Shard>, Vec<String>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::validation(format!(
            "test_fraction {test_fraction} must lie in (0, 1)"
        )));
    }
    let SplitMode::Temporal = mode;
    let start = test_start_snapshot(ds.meta.num_snapshots, test_fraction);
    let mut shards: Vec<Shard> = (0..ds.meta.num_planes)
        .map(|p| Shard {
            plane_id: p,
            train: Vec::new(),
            test: Vec::new(),
        })
        .collect();
    for (i, s) in ds.samples.iter().enumerate() {
        let shard = &mut shards[s.plane_id];
        if s.snapshot >= start {
            shard.test.push(i);
        } else {
            shard.train.push(i);
        }
    }
    let mut warnings = Vec::new();
    shards.retain(|sh| {
        let keep = !sh.train.is_empty() || !sh.test.is_empty();
        if !keep {
            let msg = format!("plane {} has no samples; shard omitted", sh.plane_id);
            log::warn!("{msg}");
            warnings.push(msg);
        }
        keep
    });
    Ok((shards, warnings))
}

/// Label histogram per shard (train and test pooled).
pub fn label_histograms(ds: &Dataset, shards: &[Shard]) -> Vec<Vec<u64>> {
    shards
        .iter()
        .map(|sh| {
            let mut h = vec![0u64; ds.meta.n_beams];
            for &i in sh.train.iter().chain(&sh.test) {
                h[ds.samples[i].label] += 1;
            }
            h
        })
        .collect()
}

/// Pearson chi-square statistic of a shards × labels contingency table.
pub fn chi_square(table: &[Vec<u64>]) -> f64 {
    let cols = table.first().map_or(0, |r| r.len());
    let row_tot: Vec<f64> = table.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let col_tot: Vec<f64> = (0..cols)
        .map(|j| table.iter().map(|r| r[j]).sum::<u64>() as f64)
        .collect();
    let total: f64 = row_tot.iter().sum();
    let mut stat = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &obs) in row.iter().enumerate() {
            let expected = row_tot[i] * col_tot[j] / total;
            if expected > 0.0 {
                stat += (obs as f64 - expected).powi(2) / expected;
            }
        }
    }
    stat
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.toml");
    PathBuf::from(s)
}

pub fn save(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    let mut rec: Vec<String> = Vec::with_capacity(CSV_HEADER.len());
    for s in &ds.samples {
        rec.clear();
        rec.push(s.plane_id.to_string());
        rec.push(s.ue_id.to_string());
        rec.push(s.sat_id.to_string());
        rec.push(s.snapshot.to_string());
        rec.push(s.elevation.to_string());
        rec.push(s.slant_range.to_string());
        rec.push(s.best_snr.to_string());
        rec.push(s.label.to_string());
        rec.extend(s.features.iter().map(|f| f.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let meta = toml::to_string(&ds.meta).map_err(|e| Error::validation(format!("metadata serialization: {e}")))?;
    fs::write(sidecar_path(path), meta)?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, path: &Path, record: usize) -> Result<T> {
    rec[idx].parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        record,
        message: format!("column {} has invalid value {:?}", CSV_HEADER[idx], &rec[idx]),
    })
}

/// Loads a dataset and its sidecar. Record numbers in errors count data rows from 1.
pub fn load(path: &Path) -> Result<Dataset> {
    let meta_path = sidecar_path(path);
    let meta_text = fs::read_to_string(&meta_path)?;
    let meta: DatasetMeta = toml::from_str(&meta_text).map_err(|e| Error::Parse {
        path: meta_path.clone(),
        record: 0,
        message: e.to_string(),
    })?;

    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            record: 0,
            message: "unexpected header".into(),
        });
    }
    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let record = i + 1;
        let rec = rec?;
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                record,
                message: format!("expected {} fields, found {}", CSV_HEADER.len(), rec.len()),
            });
        }
        let mut features = [0.0; NUM_FEATURES];
        for (k, f) in features.iter_mut().enumerate() {
            *f = parse_field(&rec, 8 + k, path, record)?;
        }
        let label: usize = parse_field(&rec, 7, path, record)?;
        if label >= meta.n_beams {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                record,
                message: format!("label {label} >= n_beams {}", meta.n_beams),
            });
        }
        samples.push(Sample {
            plane_id: parse_field(&rec, 0, path, record)?,
            ue_id: parse_field(&rec, 1, path, record)?,
            sat_id: parse_field(&rec, 2, path, record)?,
            snapshot: parse_field(&rec, 3, path, record)?,
            elevation: parse_field(&rec, 4, path, record)?,
            slant_range: parse_field(&rec, 5, path, record)?,
            best_snr: parse_field(&rec, 6, path, record)?,
            label,
            features,
        });
    }
    Ok(Dataset { samples, meta })
}

/// Loads a dataset and warns when it was generated from a different scenario.
/// Returns whether the stored hash matched.
pub fn load_checked(path: &Path, scenario: &ScenarioConfig, seed: u64) -> Result<(Dataset, bool)> {
    let ds = load(path)?;
    let expected = scenario.hash(seed);
    let matches = ds.meta.config_hash == expected;
    if !matches {
        log::warn!(
            "dataset {} was generated from config hash {:016x}, current config hashes to {:016x}",
            path.display(),
            ds.meta.config_hash,
            expected
        );
    }
    Ok((ds, matches))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{build_codebook, steering_from_cosines};
    use approx::assert_abs_diff_eq;

    pub(crate) fn small_scenario(snapshots: usize) -> ScenarioConfig {
        let mut sc = ScenarioConfig::default();
        sc.constellation.num_snapshots = snapshots;
        sc.constellation.sim_duration_s = 7.2 * snapshots as f64;
        sc.ground.num_ues = 8;
        sc
    }

    #[test]
    fn matched_beam_wins_on_pure_los() {
        let cb = build_codebook(4, 4, 100.0, 100.0);
        let p = ChannelParams::default();
        for b in 0..16 {
            let (a, e) = cb.steer_offsets[b];
            let h = steering_from_cosines(a.to_radians().sin(), e.to_radians().sin(), 0.5);
            let (label, snr) = label_link(1.1e6, &h, 0.0, &cb, &p).unwrap();
            assert_eq!(label, b);
            // oracle: brute-force argmax over the returned vector
            let oracle = (0..16).fold(0, |best, i| if snr[i] > snr[best] { i } else { best });
            assert_eq!(label, oracle);
        }
    }

    #[test]
    fn ties_go_to_lower_index() {
        assert_eq!(argmax_lowest(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax_lowest(&[5.0, 5.0]), 0);
    }

    #[test]
    fn feature_boundaries() {
        let sc = ScenarioConfig::default();
        let scaling = FeatureScaling::for_scenario(&sc);
        let ue = UeState::new(0, 35.0, 30.0, 0.0, 6_378_137.0);
        let link = LinkGeometry {
            ue_id: 0,
            sat_id: 0,
            plane_id: 0,
            snapshot: 0,
            azimuth: 0.0,
            elevation: 90.0,
            slant_range: 1_015_000.0,
            sat_heading: 90.0,
        };
        let f = extract_features(&link, &ue, &scaling);
        assert_eq!(f[0], 0.0);
        assert_eq!(f[1], 1.0);
        assert_eq!(f[2], 1.0);
        assert_eq!(f[3], 0.0);
        assert_eq!(f[6], -1.0);
        assert_eq!(f[7], 1.0);
        let mut later = link.clone();
        later.snapshot = 777;
        assert_eq!(extract_features(&later, &ue, &scaling), f);
    }

    #[test]
    fn single_snapshot_dataset() {
        let ds = generate(&small_scenario(1), 3).unwrap();
        assert!(!ds.samples.is_empty());
        assert!(ds.samples.iter().all(|s| s.snapshot == 0));
    }

    #[test]
    fn generation_is_deterministic_and_replayable() {
        let sc = small_scenario(60);
        let a = generate(&sc, 11).unwrap();
        let mut b = generate(&sc, 11).unwrap();
        b.meta.generated_unix_s = a.meta.generated_unix_s;
        assert_eq!(a, b);
        let replay = replay_labels(&a, &sc.channel, &sc.codebook).unwrap();
        for (s, (label, snr)) in a.samples.iter().zip(replay) {
            assert_eq!(s.label, label);
            assert_eq!(s.best_snr.to_bits(), snr.to_bits());
        }
        assert!(a
            .samples
            .iter()
            .all(|s| s.features.iter().all(|f| (-1.0..=1.0).contains(f))));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let mut sc = small_scenario(3);
        sc.ground.min_elevation_deg = 89.99;
        assert!(matches!(generate(&sc, 1), Err(Error::EmptyDataset)));
    }

    #[test]
    fn temporal_partition() {
        assert_eq!(test_start_snapshot(1000, 0.2), 800);
        let ds = generate(&small_scenario(50), 5).unwrap();
        let (shards, _) = partition(&ds, 0.2, SplitMode::Temporal).unwrap();
        let total: usize = shards.iter().map(|s| s.train.len() + s.test.len()).sum();
        assert_eq!(total, ds.samples.len());
        for sh in &shards {
            for &i in &sh.train {
                assert_eq!(ds.samples[i].plane_id, sh.plane_id);
                assert!(ds.samples[i].snapshot < 40);
            }
            for &i in &sh.test {
                assert_eq!(ds.samples[i].plane_id, sh.plane_id);
                assert!(ds.samples[i].snapshot >= 40);
            }
        }
        assert!(partition(&ds, 1.0, SplitMode::Temporal).is_err());
    }

    #[test]
    fn empty_plane_is_omitted() {
        let mut ds = generate(&small_scenario(5), 5).unwrap();
        ds.samples.retain(|s| s.plane_id != 2);
        let (shards, warnings) = partition(&ds, 0.2, SplitMode::Temporal).unwrap();
        assert!(shards.iter().all(|s| s.plane_id != 2));
        assert!(warnings.iter().any(|w| w.contains("plane 2 ")));
    }

    #[test]
    fn save_load_round_trip_and_errors() {
        let sc = small_scenario(2);
        let mut ds = generate(&sc, 1).unwrap();
        ds.samples.truncate(3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        save(&ds, &path).unwrap();
        assert_eq!(load(&path).unwrap(), ds);

        let (_, ok) = load_checked(&path, &sc, 1).unwrap();
        assert!(ok);
        let mut other = sc.clone();
        other.channel.tx_power_dbm += 1.0;
        let (_, ok) = load_checked(&path, &other, 1).unwrap();
        assert!(!ok);

        let text = fs::read_to_string(&path).unwrap();
        let cut = text.trim_end().rfind(',').unwrap();
        fs::write(&path, &text[..cut]).unwrap();
        match load(&path) {
            Err(Error::Parse { record, .. }) => assert_eq!(record, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn node_features_zero_offset_for_matched_beam() {
        let ds = generate(&small_scenario(3), 2).unwrap();
        let mut buf = vec![0.0; 16 * GNN_NODE_FEATURES];
        for s in &ds.samples {
            node_features(s, &ds.meta, &mut buf);
            let ue = &ds.meta.ues[s.ue_id];
            let (u, v) = beam_frame_cosines(&s.stored_geometry(ue, ds.meta.earth_radius_m));
            for b in 0..16 {
                let (a, e) = ds.meta.steer_offsets[b];
                assert_abs_diff_eq!(buf[b * 4] + a.to_radians(), u.asin(), epsilon = 1e-12);
                assert_abs_diff_eq!(buf[b * 4 + 1] + e.to_radians(), v.asin(), epsilon = 1e-12);
                assert_eq!(buf[b * 4 + 2], s.features[2]);
            }
        }
    }

    #[test]
    fn chi_square_of_identical_rows_is_zero() {
        assert_eq!(chi_square(&[vec![3, 4, 5], vec![3, 4, 5]]), 0.0);
        // 2x2 hand case: [[10, 0], [0, 10]] -> 20
        assert_abs_diff_eq!(chi_square(&[vec![10, 0], vec![0, 10]]), 20.0, epsilon = 1e-12);
    }
}
