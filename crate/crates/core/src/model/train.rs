use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attack::pgd_attack;
use super::checkpoint::{Checkpoint, CheckpointMeta};
use super::schedule::OneCycle;
use super::{accuracy, Architecture, Network};
use crate::autodiff::{Adam, AdamConfig, Reduction, Tape, Tensor};
use crate::data::augment::{mix, AugmentKind, AugmentPolicy};
use crate::data::DatasetSplit;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub max_lr: f64,
    pub batch_size: usize,
    pub peak_fraction: f64,
    pub seed: u64,
    pub augment: AugmentPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            max_lr: 1e-3,
            batch_size: 32,
            peak_fraction: 0.3,
            seed: 0,
            augment: AugmentPolicy::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if !(self.max_lr > 0.0) {
            return Err(Error::InvalidArgument("max learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.peak_fraction) {
            return Err(Error::InvalidArgument("peak fraction must lie in [0, 1]".into()));
        }
        self.augment.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Adam with a one-cycle schedule; keeps the weights of the epoch with the
/// lowest validation cross entropy.
pub fn train(split: &DatasetSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::InvalidArgument("training and validation splits must be non-empty".into()));
    }
    let side = split.side;
    let arch = Architecture::small_cnn(side, split.classes)?;
    let mut net = Network::init(arch, cfg.seed);
    let lens: Vec<usize> = net.params.iter().map(Tensor::numel).collect();
    let mut adam = Adam::new(&lens, AdamConfig { lr: cfg.max_lr, ..Default::default() });
    let steps_per_epoch = split.train.len().div_ceil(cfg.batch_size);
    let schedule =
        OneCycle { peak_fraction: cfg.peak_fraction, ..OneCycle::new(cfg.max_lr, cfg.epochs * steps_per_epoch) };

    let val_x: Vec<f64> = split.val.iter().flat_map(|im| split.normalize(&im.pixels)).collect();
    let val_y: Vec<usize> = split.val.iter().map(|im| im.label).collect();

    let mut best: Option<(usize, f64, Vec<Tensor>)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64, 0x5eed));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let labels: Vec<usize> = batch.iter().map(|&i| split.train[i].label).collect();
            let mut raw = Vec::with_capacity(batch.len() * side * side);
            for &i in batch {
                let im = &split.train[i];
                raw.extend(cfg.augment.apply(&im.pixels, side, cfg.seed, epoch, im.id)?);
            }
            if cfg.augment.kind == AugmentKind::Adversarial {
                raw = pgd_attack(&net, split.mean, split.std, &raw, &labels, cfg.augment.pgd)?;
            }
            let x = split.normalize(&raw);

            let mut tape = Tape::new();
            let params = net.register(&mut tape, true);
            let xv = tape.leaf(Tensor::new(&[batch.len(), 1, side, side], x)?);
            let z = net.forward(&mut tape, xv, &params)?;
            let loss = tape.cross_entropy(z, &labels, Reduction::Mean)?;
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Diverged { epoch: epoch + 1, loss: lv });
            }
            loss_sum += lv * batch.len() as f64;
            tape.backward(loss)?;
            let grads: Vec<Vec<f64>> = params
                .iter()
                .map(|&p| tape.grad(p).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; tape.value(p).numel()]))
                .collect();
            lr = schedule.lr(step);
            let mut slices: Vec<&mut [f64]> = net.params.iter_mut().map(Tensor::data_mut).collect();
            let grefs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            adam.step(&mut slices, &grefs, lr)?;
            step += 1;
        }

        let losses = net.losses(&val_x, &val_y)?;
        let val_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch: epoch + 1, loss: val_loss });
        }
        let val_accuracy = accuracy(&net.predict(&val_x)?, &val_y);
        let entry =
            EpochLog { epoch: epoch + 1, train_loss: loss_sum / split.train.len() as f64, val_loss, val_accuracy, lr };
        log::info!(
            "epoch {} train_loss {:.4} val_loss {:.4} val_acc {:.3}",
            entry.epoch,
            entry.train_loss,
            entry.val_loss,
            entry.val_accuracy
        );
        log.push(entry);
        if best.as_ref().is_none_or(|(_, b, _)| val_loss < *b) {
            best = Some((epoch + 1, val_loss, net.params.clone()));
        }
    }

    let (best_epoch, best_val_loss, params) = best.expect("at least one epoch");
    net.params = params;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            net,
            meta: CheckpointMeta {
                augment: cfg.augment,
                seed: cfg.seed,
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
                max_lr: cfg.max_lr,
                best_epoch,
                best_val_loss,
                mean: split.mean,
                std: split.std,
            },
        },
        log,
    })
}
