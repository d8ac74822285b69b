//! Federated training: one client per orbital plane, FedAvg aggregation in
//! ascending plane order.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{design_matrix, labels_of, Dataset, Shard};
use crate::error::{Error, Result};
use crate::eval::topk_accuracy;
use crate::nn::{init, Adam, AdamConfig, Arch, Engine, ModelParams};
use crate::seed::{derive_seed, substream};

/// How `local_epochs` is spread over rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EpochSchedule {
    /// Every round runs `local_epochs` epochs.
    #[default]
    PerRound,
    /// `local_epochs` is the total over all rounds.
    Total,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FLConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    #[serde(default)]
    pub epoch_schedule: EpochSchedule,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Filled from the run's master seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for FLConfig {
    fn default() -> Self {
        Self {
            rounds: 5,
            local_epochs: 200,
            epoch_schedule: EpochSchedule::PerRound,
            batch_size: 64,
            // Small steps keep 200 local epochs on one plane from drifting
            // far from the broadcast model.
            learning_rate: 1e-4,
            seed: 0,
        }
    }
}

impl FLConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.rounds < 1 {
            errs.push("fl.rounds must be >= 1".into());
        }
        if self.local_epochs < 1 {
            errs.push("fl.local_epochs must be >= 1".into());
        }
        if self.batch_size < 1 {
            errs.push("fl.batch_size must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            errs.push(format!(
                "fl.learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            ));
        }
        errs
    }

    /// Local epochs run in round `r` (0-based).
    pub fn epochs_in_round(&self, r: usize) -> usize {
        match self.epoch_schedule {
            EpochSchedule::PerRound => self.local_epochs,
            EpochSchedule::Total => {
                let e = self.local_epochs;
                e * (r + 1) / self.rounds - e * r / self.rounds
            }
        }
    }

    pub fn total_epochs(&self) -> usize {
        (0..self.rounds).map(|r| self.epochs_in_round(r)).sum()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..Default::default()
        }
    }
}

/// One plane's training state. The shard data are copied in at
/// construction; clients never see each other's samples.
pub struct ClientState {
    pub plane_id: usize,
    train_x: Array2<f64>,
    train_y: Vec<usize>,
    test_x: Array2<f64>,
    test_y: Vec<usize>,
    optimizer: Adam,
    rng: ChaCha8Rng,
    engine: Engine,
    order: Vec<usize>,
    batch_x: Array2<f64>,
    batch_y: Vec<usize>,
    grad: Vec<f64>,
}

impl ClientState {
    pub fn new(
        plane_id: usize,
        train: (Array2<f64>, Vec<usize>),
        test: (Array2<f64>, Vec<usize>),
        arch: &Arch,
        cfg: &FLConfig,
    ) -> Self {
        let n = arch.param_count();
        let order = (0..train.1.len()).collect();
        Self {
            plane_id,
            train_x: train.0,
            train_y: train.1,
            test_x: test.0,
            test_y: test.1,
            optimizer: Adam::new(cfg.adam(), n),
            rng: substream(cfg.seed, "shuffle", &[plane_id as u64]),
            engine: Engine::new(arch),
            order,
            batch_x: Array2::zeros((0, arch.input_width())),
            batch_y: Vec::new(),
            grad: vec![0.0; n],
        }
    }

    /// Builds a client from a dataset shard.
    pub fn from_shard(ds: &Dataset, shard: &Shard, arch: &Arch, cfg: &FLConfig) -> Self {
        let kind = arch.kind();
        Self::new(
            shard.plane_id,
            (design_matrix(ds, &shard.train, kind), labels_of(ds, &shard.train)),
            (design_matrix(ds, &shard.test, kind), labels_of(ds, &shard.test)),
            arch,
            cfg,
        )
    }

    /// Number of training samples, the FedAvg weight.
    pub fn sample_count(&self) -> usize {
        self.train_y.len()
    }

    pub fn test_count(&self) -> usize {
        self.test_y.len()
    }

    pub fn train_view(&self) -> (ArrayView2<'_, f64>, &[usize]) {
        (self.train_x.view(), &self.train_y)
    }

    pub fn test_view(&self) -> (ArrayView2<'_, f64>, &[usize]) {
        (self.test_x.view(), &self.test_y)
    }

    /// Top-1 of `params` on this client's test split; `None` when empty.
    pub fn test_top1(&mut self, params: &ModelParams) -> Result<Option<f64>> {
        if self.test_y.is_empty() {
            return Ok(None);
        }
        let logits = self.engine.forward(params, self.test_x.view())?;
        Ok(Some(topk_accuracy(logits, &self.test_y, 1)?))
    }

    fn fill_batch(&mut self, idx: std::ops::Range<usize>) {
        let rows = idx.len();
        if self.batch_x.nrows() != rows {
            self.batch_x = Array2::zeros((rows, self.train_x.ncols()));
        }
        self.batch_y.clear();
        for (k, &i) in self.order[idx].iter().enumerate() {
            self.batch_x.row_mut(k).assign(&self.train_x.row(i));
            self.batch_y.push(self.train_y[i]);
        }
    }
}

/// Outcome of one client's local update.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub params: ModelParams,
    pub sample_count: usize,
    /// Mean mini-batch loss over the final local epoch (NaN when no epoch ran).
    pub final_loss: f64,
}

/// Starts from `global` and runs `epochs` epochs of mini-batch Adam over the
/// client's shard, reshuffling each epoch with the client's own stream.
pub fn local_train(
    client: &mut ClientState,
    global: &ModelParams,
    epochs: usize,
    batch_size: usize,
    round: usize,
) -> Result<LocalUpdate> {
    let n = client.sample_count();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut params = global.clone();
    let mut final_loss = f64::NAN;
    for _ in 0..epochs {
        client.order.shuffle(&mut client.rng);
        let mut total = 0.0;
        let mut start = 0;
        while start < n {
            let end = (start + batch_size).min(n);
            client.fill_batch(start..end);
            let loss =
                match client
                    .engine
                    .loss_and_grad(&params, client.batch_x.view(), &client.batch_y, &mut client.grad)
                {
                    Ok(l) => l,
                    Err(Error::Numeric(_)) => {
                        return Err(Error::Divergence {
                            client: client.plane_id,
                            round,
                            loss: f64::NAN,
                        })
                    }
                    Err(e) => return Err(e),
                };
            client.optimizer.step(&mut params.flat, &client.grad);
            total += loss * (end - start) as f64;
            start = end;
        }
        final_loss = total / n as f64;
        if !final_loss.is_finite() || params.flat.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence {
                client: client.plane_id,
                round,
                loss: final_loss,
            });
        }
    }
    Ok(LocalUpdate {
        params,
        sample_count: n,
        final_loss,
    })
}

/// Sample-weighted mean of parameter vectors, summed in the order given.
pub fn fedavg(updates: &[(&[f64], usize)]) -> Result<Vec<f64>> {
    let Some(&(first, _)) = updates.first() else {
        return Err(Error::Aggregation("no client updates".into()));
    };
    let len = first.len();
    if let Some((p, _)) = updates.iter().find(|(p, _)| p.len() != len) {
        return Err(Error::Aggregation(format!(
            "parameter length mismatch: {} vs {}",
            p.len(),
            len
        )));
    }
    let total: usize = updates.iter().map(|&(_, n)| n).sum();
    if total == 0 {
        return Err(Error::Aggregation("total sample count is zero".into()));
    }
    let mut out = vec![0.0; len];
    for &(p, n) in updates {
        let w = n as f64 / total as f64;
        for (o, &x) in out.iter_mut().zip(p) {
            *o += w * x;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientRound {
    pub plane_id: usize,
    pub local_loss: f64,
    /// Local model on the client's own test split.
    pub local_top1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub clients: Vec<ClientRound>,
    /// Digest of the aggregated parameters.
    pub global_hash: u64,
    /// Aggregated model on the pooled test splits.
    pub global_top1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub rounds: Vec<RoundRecord>,
}

impl TrainHistory {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["round", "client", "local_loss", "local_top1"])?;
        for r in &self.rounds {
            for c in &r.clients {
                let top1 = c.local_top1.map(|v| v.to_string()).unwrap_or_default();
                w.write_record([
                    r.round.to_string(),
                    c.plane_id.to_string(),
                    c.local_loss.to_string(),
                    top1,
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Digest over every round's global hash, for determinism checks.
    pub fn digest(&self) -> u64 {
        let mut bytes = Vec::new();
        for r in &self.rounds {
            bytes.extend(r.global_hash.to_le_bytes());
            for c in &r.clients {
                bytes.extend(c.local_loss.to_le_bytes());
            }
        }
        crate::seed::fnv1a64(&bytes)
    }
}

/// A run that stopped early, with the rounds completed before the failure.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub history: TrainHistory,
}

impl From<TrainFailure> for Error {
    fn from(f: TrainFailure) -> Self {
        f.error
    }
}

/// Seed of the shared initial model.
pub fn init_seed(cfg: &FLConfig) -> u64 {
    derive_seed(cfg.seed, "init", &[])
}

/// Pooled top-1 over all clients' test splits.
fn pooled_top1(clients: &mut [ClientState], params: &ModelParams) -> Result<Option<f64>> {
    let mut hits = 0.0;
    let mut n = 0usize;
    for c in clients.iter_mut() {
        if let Some(a) = c.test_top1(params)? {
            hits += a * c.test_count() as f64;
            n += c.test_count();
        }
    }
    Ok((n > 0).then(|| hits / n as f64))
}

/// `R` rounds of broadcast, parallel local training and FedAvg. Clients must
/// be sorted by plane id; aggregation follows that order. Clients without
/// training samples carry zero weight and sit out local training.
pub fn run_federated(
    clients: &mut [ClientState],
    arch: &Arch,
    cfg: &FLConfig,
) -> std::result::Result<(ModelParams, TrainHistory), TrainFailure> {
    let mut history = TrainHistory::default();
    let fail = |error: Error, history: &TrainHistory| TrainFailure {
        error,
        history: history.clone(),
    };
    if clients.is_empty() {
        return Err(fail(Error::EmptyDataset, &history));
    }
    if clients.windows(2).any(|w| w[0].plane_id > w[1].plane_id) {
        return Err(fail(
            Error::Aggregation("clients must be in ascending plane order".into()),
            &history,
        ));
    }
    for c in clients.iter().filter(|c| c.sample_count() == 0) {
        log::warn!(
            "plane {} has no training samples; it is evaluated but does not train",
            c.plane_id
        );
    }
    if clients.iter().all(|c| c.sample_count() == 0) {
        return Err(fail(Error::EmptyDataset, &history));
    }
    let mut global = init(arch, init_seed(cfg));
    for round in 0..cfg.rounds {
        let epochs = cfg.epochs_in_round(round);
        let results: Vec<Result<(LocalUpdate, Option<f64>)>> = clients
            .par_iter_mut()
            .filter(|c| c.sample_count() > 0)
            .map(|c| {
                let update = local_train(c, &global, epochs, cfg.batch_size, round)?;
                let top1 = c.test_top1(&update.params)?;
                Ok((update, top1))
            })
            .collect();
        let mut updates = Vec::with_capacity(results.len());
        for r in results {
            updates.push(r.map_err(|e| fail(e, &history))?);
        }
        let refs: Vec<(&[f64], usize)> = updates
            .iter()
            .map(|(u, _)| (u.params.flat.as_slice(), u.sample_count))
            .collect();
        let flat = fedavg(&refs).map_err(|e| fail(e, &history))?;
        global = ModelParams::from_flat(arch.clone(), flat).map_err(|e| fail(e, &history))?;
        let global_top1 = pooled_top1(clients, &global).map_err(|e| fail(e, &history))?;
        let record = RoundRecord {
            round,
            clients: clients
                .iter()
                .filter(|c| c.sample_count() > 0)
                .zip(&updates)
                .map(|(c, (u, top1))| ClientRound {
                    plane_id: c.plane_id,
                    local_loss: u.final_loss,
                    local_top1: *top1,
                })
                .collect(),
            global_hash: global.digest(),
            global_top1,
        };
        log::info!(
            "round {}/{}: global top-1 {}",
            round + 1,
            cfg.rounds,
            global_top1.map_or("n/a".to_string(), |a| format!("{a:.4}"))
        );
        history.rounds.push(record);
    }
    Ok((global, history))
}

/// Trains one client for the whole schedule without aggregation.
pub fn train_centralized(client: &mut ClientState, arch: &Arch, cfg: &FLConfig) -> Result<ModelParams> {
    let global = init(arch, init_seed(cfg));
    Ok(local_train(client, &global, cfg.total_epochs(), cfg.batch_size, 0)?.params)
}

/// Concatenates every shard's train and test rows into a single client;
/// used as the centralized baseline.
pub fn pooled_client(ds: &Dataset, shards: &[Shard], arch: &Arch, cfg: &FLConfig) -> ClientState {
    let pooled = Shard {
        plane_id: shards.first().map_or(0, |s| s.plane_id),
        train: shards.iter().flat_map(|s| s.train.iter().copied()).collect(),
        test: shards.iter().flat_map(|s| s.test.iter().copied()).collect(),
    };
    ClientState::from_shard(ds, &pooled, arch, cfg)
}
