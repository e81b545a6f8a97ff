//! Mini-batch training with early stopping, head-only fine-tuning and the
//! finite-difference gradient check.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::context::{Dataset, Extras, Sample};
use super::network::{FocalParams, LossParts, Network};
use crate::error::{Error, Result};
use crate::nn::{max_relative_error, Adam};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 128,
            max_epochs: 25,
            patience: 3,
            val_fraction: 0.1,
            focal_alpha: 0.75,
            focal_gamma: 3.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn focal(&self) -> FocalParams {
        FocalParams { alpha: self.focal_alpha, gamma: self.focal_gamma }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!("validation fraction must be in (0, 1), got {}", self.val_fraction)));
        }
        if self.batch_size == 0 || self.lr <= 0.0 {
            return Err(Error::Config("batch size and learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self { epochs: 15, lr: 1e-5, batch_size: 128, focal_alpha: 0.75, focal_gamma: 3.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub train: LossParts,
    pub val: LossParts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss before the first update.
    pub initial: LossParts,
    pub epochs: Vec<EpochStats>,
    /// Epoch (1-based) whose weights were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

pub(crate) fn extras_for<'a>(data: &'a Dataset, s: &Sample, zeros: &'a ZeroExtras) -> Extras<'a> {
    match s.last() {
        Some(i) => {
            let c = &data.contexts[i];
            Extras { count_onehot: &c.count_onehot, tables: &c.tables, bi_delta: &c.bi_delta }
        }
        None => Extras { count_onehot: &zeros.count, tables: &zeros.tables, bi_delta: &zeros.deltas },
    }
}

pub(crate) struct ZeroExtras {
    count: Vec<f64>,
    tables: Vec<f64>,
    deltas: Vec<f64>,
}

impl ZeroExtras {
    pub(crate) fn for_net(net: &Network) -> Self {
        Self {
            count: vec![0.0; net.cfg.count_buckets],
            tables: vec![0.0; net.shape.tables],
            deltas: vec![0.0; net.shape.classes],
        }
    }
}

/// Mean loss over `idx` with dropout off.
pub fn evaluate(net: &Network, data: &Dataset, idx: &[usize], focal: FocalParams) -> Result<LossParts> {
    let zeros = ZeroExtras::for_net(net);
    let mut acc = LossParts::default();
    for &i in idx {
        let s = &data.samples[i];
        let l = net.loss_and_grad::<ChaCha8Rng>(
            &data.window(s),
            &extras_for(data, s, &zeros),
            &s.targets,
            focal,
            None,
            None,
        )?;
        acc.add(&l);
    }
    if !idx.is_empty() {
        acc.scale(1.0 / idx.len() as f64);
    }
    Ok(acc)
}

/// Mean loss and mean gradient over `idx`, dropout off.
pub fn batch_gradient(
    net: &Network,
    data: &Dataset,
    idx: &[usize],
    focal: FocalParams,
) -> Result<(LossParts, Vec<f64>)> {
    let zeros = ZeroExtras::for_net(net);
    let mut grad = vec![0.0; net.param_count()];
    let mut acc = LossParts::default();
    for &i in idx {
        let s = &data.samples[i];
        let l = net.loss_and_grad::<ChaCha8Rng>(
            &data.window(s),
            &extras_for(data, s, &zeros),
            &s.targets,
            focal,
            None,
            Some(&mut grad),
        )?;
        acc.add(&l);
    }
    if !idx.is_empty() {
        let f = 1.0 / idx.len() as f64;
        acc.scale(f);
        grad.iter_mut().for_each(|g| *g *= f);
    }
    Ok((acc, grad))
}

/// One pass over `order` in mini-batches. Returns the mean training loss.
#[allow(clippy::too_many_arguments)]
fn run_epoch(
    net: &mut Network,
    data: &Dataset,
    order: &[usize],
    batch: usize,
    focal: FocalParams,
    opt: &mut Adam,
    mask: Option<&[bool]>,
    dropout_rng: &mut ChaCha8Rng,
) -> Result<LossParts> {
    let zeros = ZeroExtras::for_net(net);
    let mut acc = LossParts::default();
    for chunk in order.chunks(batch.max(1)) {
        let mut grad = vec![0.0; net.param_count()];
        for &i in chunk {
            let s = &data.samples[i];
            let l = net.loss_and_grad(
                &data.window(s),
                &extras_for(data, s, &zeros),
                &s.targets,
                focal,
                Some(&mut *dropout_rng),
                Some(&mut grad),
            )?;
            acc.add(&l);
        }
        let f = 1.0 / chunk.len() as f64;
        grad.iter_mut().for_each(|g| *g *= f);
        opt.step(&mut net.params, &grad, mask);
    }
    acc.scale(1.0 / order.len().max(1) as f64);
    Ok(acc)
}

/// Chronological split: the last `val_fraction` of samples validate.
pub fn split_indices(n: usize, val_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    if n < 2 {
        return ((0..n).collect(), (0..n).collect());
    }
    let val = ((n as f64 * val_fraction).ceil() as usize).clamp(1, n - 1);
    ((0..n - val).collect(), (n - val..n).collect())
}

/// Trains all weights. Early stopping watches the validation delta-head loss
/// and restores the best weights seen.
pub fn train(net: &mut Network, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if data.samples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let focal = cfg.focal();
    let (train_idx, val_idx) = split_indices(data.samples.len(), cfg.val_fraction);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7368_7566);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6472_6f70);
    let mut opt = Adam::new(cfg.lr, net.param_count());
    let initial = evaluate(net, data, &train_idx, focal)?;
    let mut report = TrainReport { initial, epochs: Vec::new(), best_epoch: 0, stopped_early: false };
    let mut best = (evaluate(net, data, &val_idx, focal)?.deltas, net.params.clone());
    let mut since_best = 0;
    let mut order = train_idx.clone();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let train_loss = run_epoch(net, data, &order, cfg.batch_size, focal, &mut opt, None, &mut dropout_rng)?;
        let val = evaluate(net, data, &val_idx, focal)?;
        if !train_loss.total().is_finite() || !val.total().is_finite() {
            return Err(Error::Diverged { epoch });
        }
        log::debug!("epoch {epoch}: train {:.6} val delta {:.6}", train_loss.total(), val.deltas);
        report.epochs.push(EpochStats { train: train_loss, val });
        if val.deltas < best.0 {
            best = (val.deltas, net.params.clone());
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    net.params = best.1;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneReport {
    pub reinitialized: Vec<usize>,
    /// Delta-head loss on the tuning data before and after each epoch.
    pub delta_loss: Vec<f64>,
}

/// Retrains only the head weights on recent samples. Output units listed in
/// `remapped` get fresh incoming weights first.
pub fn fine_tune(
    net: &mut Network,
    data: &Dataset,
    remapped: &[usize],
    cfg: &FineTuneConfig,
) -> Result<FineTuneReport> {
    let focal = FocalParams { alpha: cfg.focal_alpha, gamma: cfg.focal_gamma };
    if !remapped.is_empty() {
        net.reinit_delta_rows(remapped, cfg.seed);
    }
    let all: Vec<usize> = (0..data.samples.len()).collect();
    let mut report = FineTuneReport { reinitialized: remapped.to_vec(), delta_loss: Vec::new() };
    if all.is_empty() || cfg.epochs == 0 {
        return Ok(report);
    }
    report.delta_loss.push(evaluate(net, data, &all, focal)?.deltas);
    let head = net.layout().head_range();
    let mask: Vec<bool> = (0..net.param_count()).map(|i| head.contains(&i)).collect();
    let mut opt = Adam::new(cfg.lr, net.param_count());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6674_7368);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6674_6472);
    let mut order = all.clone();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let l = run_epoch(net, data, &order, cfg.batch_size, focal, &mut opt, Some(&mask), &mut dropout_rng)?;
        if !l.total().is_finite() {
            return Err(Error::Diverged { epoch });
        }
        report.delta_loss.push(evaluate(net, data, &all, focal)?.deltas);
    }
    Ok(report)
}

/// Largest relative error between `analytic` and central differences
/// (step 1e-4) of the mean loss over all samples of `data`.
pub fn gradient_check(net: &Network, data: &Dataset, focal: FocalParams, analytic: &[f64]) -> Result<f64> {
    let all: Vec<usize> = (0..data.samples.len()).collect();
    let mut probe = net.clone();
    let mut failure = None;
    let err = max_relative_error(&net.params, analytic, 1e-4, 1e-6, |p| {
        probe.params.copy_from_slice(p);
        match evaluate(&probe, data, &all, focal) {
            Ok(l) => l.total(),
            Err(e) => {
                failure = Some(e);
                f64::NAN
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(err),
    }
}
