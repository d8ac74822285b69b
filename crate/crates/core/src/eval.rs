//! Accuracy, elevation-binned accuracy and beam-switching statistics on the
//! temporal test split, plus the CSV reports built from them.

use std::collections::HashMap;
use std::path::Path;

use ndarray::ArrayView2;
use serde::Serialize;

use crate::dataset::{design_matrix, Dataset, Shard};
use crate::error::{Error, Result};
use crate::nn::{Engine, ModelKind, ModelParams};

/// Position of `label` when the row is sorted by descending score, ties
/// broken toward the lower index.
pub fn label_rank(row: &[f64], label: usize) -> usize {
    let s = row[label];
    row.iter()
        .enumerate()
        .filter(|&(j, &z)| z > s || (z == s && j < label))
        .count()
}

/// Fraction of rows whose label is among the `k` highest scores.
pub fn topk_accuracy(logits: ArrayView2<f64>, labels: &[usize], k: usize) -> Result<f64> {
    if logits.nrows() == 0 {
        return Err(Error::UndefinedMetric("top-k accuracy of an empty set".into()));
    }
    if labels.len() != logits.nrows() {
        return Err(Error::Dimension {
            layer: "labels".into(),
            expected: logits.nrows(),
            actual: labels.len(),
        });
    }
    let n = logits.ncols();
    if k < 1 || k > n {
        return Err(Error::validation(format!("k = {k} outside 1..={n}")));
    }
    let mut hits = 0usize;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        if y >= n {
            return Err(Error::Dimension {
                layer: "label".into(),
                expected: n,
                actual: y,
            });
        }
        let row = row.to_vec();
        if label_rank(&row, y) < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientAccuracy {
    pub plane_id: usize,
    pub top1: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerClientAccuracy {
    pub clients: Vec<ClientAccuracy>,
    /// Unweighted mean over clients with a nonempty test split.
    pub mean: f64,
    /// Planes skipped because their test split is empty.
    pub skipped: Vec<usize>,
}

/// Per-plane top-1 from per-sample hits grouped by shard.
pub fn per_client_accuracy(shards: &[Shard], hit: impl Fn(usize) -> bool) -> Result<PerClientAccuracy> {
    let mut clients = Vec::new();
    let mut skipped = Vec::new();
    for sh in shards {
        if sh.test.is_empty() {
            log::warn!("plane {} has an empty test split; skipped", sh.plane_id);
            skipped.push(sh.plane_id);
            continue;
        }
        let hits = sh.test.iter().filter(|&&i| hit(i)).count();
        clients.push(ClientAccuracy {
            plane_id: sh.plane_id,
            top1: hits as f64 / sh.test.len() as f64,
            n: sh.test.len(),
        });
    }
    if clients.is_empty() {
        return Err(Error::UndefinedMetric("no client has test samples".into()));
    }
    let mean = clients.iter().map(|c| c.top1).sum::<f64>() / clients.len() as f64;
    Ok(PerClientAccuracy { clients, mean, skipped })
}

/// Elevation bin edges `[θ_min, θ_min + w), …` up to 90°, the last bin
/// truncated at 90°.
#[derive(Debug, Clone, PartialEq)]
pub struct ElevationBins {
    pub edges: Vec<f64>,
}

impl ElevationBins {
    pub fn new(theta_min: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) || !(theta_min < 90.0) {
            return Err(Error::validation(format!(
                "elevation bins need width > 0 and theta_min < 90 (got {width}, {theta_min})"
            )));
        }
        let mut edges = vec![theta_min];
        let mut k = 1.0;
        loop {
            let e = theta_min + k * width;
            if e >= 90.0 - 1e-9 {
                edges.push(90.0);
                break;
            }
            edges.push(e);
            k += 1.0;
        }
        Ok(Self { edges })
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bounds(&self, b: usize) -> (f64, f64) {
        (self.edges[b], self.edges[b + 1])
    }

    /// Bin of an elevation; values at or past 90° fall in the last bin and
    /// values below the first edge in the first.
    pub fn index(&self, elevation: f64) -> usize {
        self.edges[1..self.len()].partition_point(|&e| e <= elevation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElevationAccuracy {
    pub bin_lo: f64,
    pub bin_hi: f64,
    /// `None` for an empty bin.
    pub top1: Option<f64>,
    pub n: usize,
}

/// Top-1 per elevation bin over `(elevation, hit)` pairs.
pub fn elevation_binned_accuracy(
    items: impl IntoIterator<Item = (f64, bool)>,
    bins: &ElevationBins,
) -> Vec<ElevationAccuracy> {
    let mut n = vec![0usize; bins.len()];
    let mut hits = vec![0usize; bins.len()];
    for (e, hit) in items {
        let b = bins.index(e);
        n[b] += 1;
        hits[b] += hit as usize;
    }
    (0..bins.len())
        .map(|b| {
            let (lo, hi) = bins.bounds(b);
            ElevationAccuracy {
                bin_lo: lo,
                bin_hi: hi,
                top1: (n[b] > 0).then(|| hits[b] as f64 / n[b] as f64),
                n: n[b],
            }
        })
        .collect()
}

/// Consecutive-snapshot pairs of the same link within `indices`, as
/// `(earlier, later)` sample indices.
pub fn link_transitions(ds: &Dataset, indices: &[usize]) -> Vec<(usize, usize)> {
    let key = |i: usize| {
        let s = &ds.samples[i];
        (s.ue_id, s.sat_id, s.snapshot)
    };
    let lookup: HashMap<(usize, usize, usize), usize> = indices.iter().map(|&i| (key(i), i)).collect();
    let mut pairs: Vec<(usize, usize)> = indices
        .iter()
        .filter_map(|&i| {
            let (u, s, t) = key(i);
            lookup.get(&(u, s, t + 1)).map(|&j| (i, j))
        })
        .collect();
    pairs.sort_unstable();
    pairs
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchingBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    /// `None` when the bin has no transitions.
    pub model_rate: Option<f64>,
    pub oracle_rate: Option<f64>,
    pub n: usize,
}

/// Fraction of transitions whose beam changed, per bin of the earlier
/// snapshot's elevation.
pub fn switching_rate(
    transitions: &[(usize, usize)],
    elevation: impl Fn(usize) -> f64,
    beam: impl Fn(usize) -> usize,
    bins: &ElevationBins,
) -> Vec<(usize, Option<f64>)> {
    let mut n = vec![0usize; bins.len()];
    let mut changed = vec![0usize; bins.len()];
    for &(a, b) in transitions {
        let k = bins.index(elevation(a));
        n[k] += 1;
        changed[k] += (beam(a) != beam(b)) as usize;
    }
    n.iter()
        .zip(&changed)
        .map(|(&n, &c)| (n, (n > 0).then(|| c as f64 / n as f64)))
        .collect()
}

/// Model-free switching statistics from stored labels.
pub fn oracle_switching(ds: &Dataset, indices: &[usize], bins: &ElevationBins) -> Vec<(usize, Option<f64>)> {
    let tr = link_transitions(ds, indices);
    switching_rate(&tr, |i| ds.samples[i].elevation, |i| ds.samples[i].label, bins)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub model: ModelKind,
    pub n_test: usize,
    pub top1: f64,
    pub top3: f64,
    pub per_client: PerClientAccuracy,
    pub elevation_bins: Vec<ElevationAccuracy>,
    pub switching: Vec<SwitchingBin>,
    /// Wall-clock training time, when known.
    pub train_time_s: Option<f64>,
    pub param_bytes: u64,
}

/// Test-split indices in plane order.
pub fn test_indices(shards: &[Shard]) -> Vec<usize> {
    shards.iter().flat_map(|s| s.test.iter().copied()).collect()
}

/// Rank of the true label under `params` for every index, evaluated in
/// chunks.
pub fn label_ranks(params: &ModelParams, ds: &Dataset, indices: &[usize]) -> Result<HashMap<usize, (usize, usize)>> {
    const CHUNK: usize = 4096;
    let mut engine = Engine::new(&params.arch);
    let mut out = HashMap::with_capacity(indices.len());
    for chunk in indices.chunks(CHUNK) {
        let x = design_matrix(ds, chunk, params.arch.kind());
        let logits = engine.forward(params, x.view())?;
        for (row, &i) in logits.rows().into_iter().zip(chunk) {
            let row = row.to_vec();
            let pred = crate::dataset::argmax_lowest(&row);
            out.insert(i, (label_rank(&row, ds.samples[i].label), pred));
        }
    }
    Ok(out)
}

/// Every metric for one model on the shared temporal test split.
pub fn build_report(
    params: &ModelParams,
    ds: &Dataset,
    shards: &[Shard],
    bin_width: f64,
    train_time_s: Option<f64>,
    param_bytes: u64,
) -> Result<MetricsReport> {
    if params.arch.n_beams() != ds.meta.n_beams {
        return Err(Error::validation(format!(
            "model scores {} beams but the dataset has {}",
            params.arch.n_beams(),
            ds.meta.n_beams
        )));
    }
    if params.arch.kind() == ModelKind::Gnn {
        if let crate::nn::Arch::Gnn { n_az, n_el, .. } = params.arch {
            if (n_az, n_el) != (ds.meta.n_az, ds.meta.n_el) {
                return Err(Error::validation(
                    "graph model grid does not match the codebook".to_string(),
                ));
            }
        }
    }
    let idx = test_indices(shards);
    if idx.is_empty() {
        return Err(Error::UndefinedMetric("empty test split".into()));
    }
    let ranks = label_ranks(params, ds, &idx)?;
    let n = idx.len() as f64;
    let top1 = idx.iter().filter(|i| ranks[i].0 < 1).count() as f64 / n;
    let top3 = idx.iter().filter(|i| ranks[i].0 < 3).count() as f64 / n;
    let per_client = per_client_accuracy(shards, |i| ranks[&i].0 == 0)?;
    let bins = ElevationBins::new(ds.meta.min_elevation_deg, bin_width)?;
    let elevation_bins =
        elevation_binned_accuracy(idx.iter().map(|&i| (ds.samples[i].elevation, ranks[&i].0 == 0)), &bins);
    let tr = link_transitions(ds, &idx);
    let model = switching_rate(&tr, |i| ds.samples[i].elevation, |i| ranks[&i].1, &bins);
    let oracle = switching_rate(&tr, |i| ds.samples[i].elevation, |i| ds.samples[i].label, &bins);
    let switching = model
        .iter()
        .zip(&oracle)
        .enumerate()
        .map(|(b, (&(n, m), &(_, o)))| {
            let (lo, hi) = bins.bounds(b);
            SwitchingBin {
                bin_lo: lo,
                bin_hi: hi,
                model_rate: m,
                oracle_rate: o,
                n,
            }
        })
        .collect();
    Ok(MetricsReport {
        model: params.arch.kind(),
        n_test: idx.len(),
        top1,
        top3,
        per_client,
        elevation_bins,
        switching,
        train_time_s,
        param_bytes,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    /// Mean of `|model − oracle|` over bins where both rates exist.
    pub fn switching_gap(&self) -> Option<f64> {
        let gaps: Vec<f64> = self
            .switching
            .iter()
            .filter_map(|b| Some((b.model_rate? - b.oracle_rate?).abs()))
            .collect();
        (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
    }

    /// `metrics.csv`, `elevation_accuracy.csv` and `switching.csv` in `dir`.
    /// Training time is left out so the files are reproducible.
    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
        w.write_record(["metric", "value"])?;
        w.write_record(["model", &self.model.to_string()])?;
        w.write_record(["n_test", &self.n_test.to_string()])?;
        w.write_record(["top1", &self.top1.to_string()])?;
        w.write_record(["top3", &self.top3.to_string()])?;
        w.write_record(["mean_client_top1", &self.per_client.mean.to_string()])?;
        for c in &self.per_client.clients {
            w.write_record([format!("client_{}_top1", c.plane_id), c.top1.to_string()])?;
        }
        w.write_record(["param_bytes", &self.param_bytes.to_string()])?;
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("elevation_accuracy.csv"))?;
        w.write_record(["bin_lo", "bin_hi", "top1", "n"])?;
        for b in &self.elevation_bins {
            w.write_record([b.bin_lo.to_string(), b.bin_hi.to_string(), opt(b.top1), b.n.to_string()])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("switching.csv"))?;
        w.write_record(["bin_lo", "bin_hi", "model_rate", "oracle_rate", "n"])?;
        for b in &self.switching {
            w.write_record([
                b.bin_lo.to_string(),
                b.bin_hi.to_string(),
                opt(b.model_rate),
                opt(b.oracle_rate),
                b.n.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Structured-text summary including the training time.
    pub fn write_summary(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::validation(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Rows of the side-by-side comparison, in order.
pub const COMPARISON_ROWS: [&str; 5] = [
    "Top-1 Accuracy",
    "Top-3 Accuracy",
    "Top-1 Mean Accuracy across clients",
    "Training Time",
    "Model Size",
];

/// Two-model comparison table: accuracies in percent, time in seconds,
/// size in kilobytes (1000 bytes).
pub fn write_comparison(mlp: &MetricsReport, gnn: &MetricsReport, path: &Path) -> Result<()> {
    let row = |r: &MetricsReport| {
        [
            Some(100.0 * r.top1),
            Some(100.0 * r.top3),
            Some(100.0 * r.per_client.mean),
            r.train_time_s,
            Some(r.param_bytes as f64 / 1000.0),
        ]
    };
    let units = ["%", "%", "%", "s", "KB"];
    let (a, b) = (row(mlp), row(gnn));
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["metric", "unit", "mlp", "gnn"])?;
    for k in 0..COMPARISON_ROWS.len() {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_default();
        w.write_record([COMPARISON_ROWS[k], units[k], &fmt(a[k]), &fmt(b[k])])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn full_k_covers_everything() {
        let z = array![[0.1, 0.5, -2.0], [3.0, 3.0, 3.0]];
        assert_eq!(topk_accuracy(z.view(), &[2, 1], 3).unwrap(), 1.0);
        assert!(topk_accuracy(z.view(), &[2, 1], 4).is_err());
        assert!(topk_accuracy(z.view(), &[2, 1], 0).is_err());
    }

    #[test]
    fn empty_input_is_undefined() {
        let z = ndarray::Array2::<f64>::zeros((0, 16));
        assert!(matches!(
            topk_accuracy(z.view(), &[], 1),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn single_row_argmax_hit() {
        let z = array![[0.0, 2.0, 1.0]];
        assert_eq!(topk_accuracy(z.view(), &[1], 1).unwrap(), 1.0);
        assert_eq!(topk_accuracy(z.view(), &[2], 1).unwrap(), 0.0);
    }

    /// Sort-based oracle: stable descending sort by score, ties keep index
    /// order.
    fn brute_rank(row: &[f64], label: usize) -> usize {
        let mut order: Vec<usize> = (0..row.len()).collect();
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap());
        order.iter().position(|&j| j == label).unwrap()
    }

    #[test]
    fn hand_batch_matches_sorting_oracle() {
        let z = array![
            [0.9, 0.1, 0.5, 0.3],
            [0.2, 0.2, 0.2, 0.2],
            [1.0, 4.0, 3.0, 2.0],
            [-1.0, -3.0, -2.0, 0.0]
        ];
        let y = [2, 3, 3, 2];
        // ranks: 1, 3, 2, 2
        for k in 1..=4 {
            let expected = z
                .rows()
                .into_iter()
                .zip(y)
                .filter(|(r, l)| brute_rank(&r.to_vec(), *l) < k)
                .count() as f64
                / 4.0;
            assert_eq!(topk_accuracy(z.view(), &y, k).unwrap(), expected);
        }
        assert_eq!(topk_accuracy(z.view(), &y, 1).unwrap(), 0.0);
        assert_eq!(topk_accuracy(z.view(), &y, 2).unwrap(), 0.25);
        assert_eq!(topk_accuracy(z.view(), &y, 3).unwrap(), 0.75);
    }

    #[test]
    fn client_mean_is_unweighted() {
        let shards = vec![
            Shard {
                plane_id: 0,
                train: vec![],
                test: (0..10).collect(),
            },
            Shard {
                plane_id: 1,
                train: vec![],
                test: (10..12).collect(),
            },
            Shard {
                plane_id: 2,
                train: vec![1],
                test: vec![],
            },
        ];
        // plane 0: 8 of 10, plane 1: 2 of 2
        let r = per_client_accuracy(&shards, |i| i >= 2).unwrap();
        assert_eq!(r.clients[0].top1, 0.8);
        assert_eq!(r.clients[1].top1, 1.0);
        assert!((r.mean - 0.9).abs() < 1e-15);
        assert_eq!(r.skipped, vec![2]);
    }

    #[test]
    fn identical_clients_share_accuracy() {
        let shards: Vec<Shard> = (0..3)
            .map(|p| Shard {
                plane_id: p,
                train: vec![],
                test: (0..4).collect(),
            })
            .collect();
        let r = per_client_accuracy(&shards, |i| i % 2 == 0).unwrap();
        assert!(r.clients.iter().all(|c| c.top1 == 0.5));
        assert_eq!(r.mean, 0.5);
    }

    #[test]
    fn bins_cover_theta_min_to_zenith() {
        let b = ElevationBins::new(10.0, 10.0).unwrap();
        assert_eq!(b.edges, vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0]);
        assert_eq!(b.index(10.0001), 0);
        assert_eq!(b.index(19.999), 0);
        assert_eq!(b.index(20.0), 1);
        assert_eq!(b.index(89.9), 7);
        assert_eq!(b.index(90.0), 7);
        let t = ElevationBins::new(10.0, 25.0).unwrap();
        assert_eq!(t.edges, vec![10.0, 35.0, 60.0, 85.0, 90.0]);
    }

    #[test]
    fn single_bin_equals_global() {
        let b = ElevationBins::new(10.0, 100.0).unwrap();
        assert_eq!(b.len(), 1);
        let items = [(15.0, true), (40.0, false), (80.0, true), (85.0, true)];
        let r = elevation_binned_accuracy(items, &b);
        assert_eq!(r[0].top1, Some(0.75));
        assert_eq!(r[0].n, 4);
    }

    #[test]
    fn constant_and_alternating_beams() {
        let bins = ElevationBins::new(10.0, 10.0).unwrap();
        let tr: Vec<(usize, usize)> = (0..9).map(|i| (i, i + 1)).collect();
        let elev = |i: usize| 12.0 + i as f64;
        let constant = switching_rate(&tr, elev, |_| 5, &bins);
        assert_eq!(constant[0], (8, Some(0.0)));
        assert_eq!(constant[1], (1, Some(0.0)));
        assert!(constant[2..].iter().all(|&(n, r)| n == 0 && r.is_none()));
        let alternating = switching_rate(&tr, elev, |i| i % 2, &bins);
        assert_eq!(alternating[0], (8, Some(1.0)));
    }

    proptest! {
        #[test]
        fn binned_counts_reweight_to_global(
            items in proptest::collection::vec((10.001f64..90.0, any::<bool>()), 1..200),
            width in 1.0f64..40.0,
        ) {
            let bins = ElevationBins::new(10.0, width).unwrap();
            let r = elevation_binned_accuracy(items.iter().copied(), &bins);
            let total: usize = r.iter().map(|b| b.n).sum();
            prop_assert_eq!(total, items.len());
            let hits: f64 = r.iter().filter_map(|b| Some(b.top1? * b.n as f64)).sum();
            let global = items.iter().filter(|x| x.1).count() as f64;
            prop_assert!((hits - global).abs() < 1e-9);
        }

        #[test]
        fn top1_le_top3(rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 16), 1..20), seed in any::<u64>()) {
            let n = rows.len();
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            let z = ndarray::Array2::from_shape_vec((n, 16), flat).unwrap();
            let y: Vec<usize> = (0..n).map(|i| ((seed >> (i % 60)) as usize + i) % 16).collect();
            let t1 = topk_accuracy(z.view(), &y, 1).unwrap();
            let t3 = topk_accuracy(z.view(), &y, 3).unwrap();
            prop_assert!(t1 <= t3 && t3 <= 1.0);
        }
    }
}
