//! `train`, `attack` and `learn-mask`.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde_json::json;

use super::{AugmentArgs, CliError, CommonArgs, DataArgs, PgdArgs, Run};
use crate::data::LabeledImage;
use crate::mask::{
    filter_images, learn_mask_global, learn_masks_single, Mask, MaskFile, MaskLearnConfig, MaskMeta, MaskOutcome, Norm,
    SingleResult,
};
use crate::model::{accuracy, pgd_attack, train as train_model, Checkpoint, TrainConfig};
use crate::report::{write_csv, write_json, SCHEMA_VERSION};

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub augment: AugmentArgs,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub max_lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Fraction of steps spent warming up to the peak learning rate.
    #[arg(long, default_value_t = 0.3)]
    pub peak_fraction: f64,
}

pub(super) fn train(a: TrainArgs, mut run: Run) -> Result<(), CliError> {
    let split = a.data.load(&mut run.manifest)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        max_lr: a.max_lr,
        batch_size: a.batch_size,
        peak_fraction: a.peak_fraction,
        seed: a.common.seed,
        augment: a.augment.policy(),
    };
    let out = train_model(&split, &cfg)?;
    let ckpt_path = run.manifest.output("model.smck");
    out.checkpoint.save(&ckpt_path)?;
    write_csv(
        &run.manifest.output("epochs.csv"),
        &["epoch", "train_loss", "val_loss", "val_accuracy", "lr"],
        out.log.iter().map(|e| {
            [
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.val_loss.to_string(),
                e.val_accuracy.to_string(),
                e.lr.to_string(),
            ]
        }),
    )?;
    let ck = &out.checkpoint;
    let val_acc = val_accuracy(ck, &split.val, None)?;
    write_json(
        &run.manifest.output("summary.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "command": "train",
            "augment": ck.meta.augment.kind.as_str(),
            "checkpoint_hash": ck.hash(),
            "best_epoch": ck.meta.best_epoch,
            "best_val_loss": ck.meta.best_val_loss,
            "val_accuracy": val_acc,
            "train_size": split.train.len(),
            "val_size": split.val.len(),
            "split_hash": split.id_hash(),
        }),
    )?;
    println!("checkpoint {} val_accuracy {val_acc:.4}", ckpt_path.display());
    run.finish()
}

fn raw_and_labels(images: &[LabeledImage]) -> (Vec<f64>, Vec<usize>) {
    (images.iter().flat_map(|i| i.pixels.iter().copied()).collect(), images.iter().map(|i| i.label).collect())
}

/// Accuracy on raw images, optionally filtered by a mask first.
fn val_accuracy(ck: &Checkpoint, images: &[LabeledImage], mask: Option<&Mask>) -> Result<f64, CliError> {
    let (raw, y) = raw_and_labels(images);
    let mut x = ck.normalize(&raw);
    if let Some(m) = mask {
        x = filter_images(&x, m)?;
    }
    Ok(accuracy(&ck.net.predict(&x)?, &y))
}

fn load_checkpoint(path: &Path, run: &mut Run) -> Result<Checkpoint, CliError> {
    run.manifest.input(path);
    Ok(Checkpoint::load(path)?)
}

fn take_limit(images: &[LabeledImage], limit: usize) -> &[LabeledImage] {
    if limit == 0 {
        images
    } else {
        &images[..limit.min(images.len())]
    }
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Model that crafts the perturbations. Defaults to the evaluated checkpoint.
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[command(flatten)]
    pub pgd: PgdArgs,
    /// Attack only the first N validation images (0 = all).
    #[arg(long, default_value_t = 0)]
    pub limit: usize,
}

pub(super) fn attack(a: AttackArgs, mut run: Run) -> Result<(), CliError> {
    let split = a.data.load(&mut run.manifest)?;
    let target = load_checkpoint(&a.checkpoint, &mut run)?;
    let source = match &a.source {
        Some(p) => load_checkpoint(p, &mut run)?,
        None => target.clone(),
    };
    let val = take_limit(&split.val, a.limit);
    let (raw, y) = raw_and_labels(val);
    let adv = pgd_attack(&source.net, source.meta.mean, source.meta.std, &raw, &y, a.pgd.params())?;
    let clean_pred = target.net.predict(&target.normalize(&raw))?;
    let adv_pred = target.net.predict(&target.normalize(&adv))?;
    write_csv(
        &run.manifest.output("attack.csv"),
        &["image", "label", "clean_pred", "adv_pred"],
        val.iter()
            .zip(clean_pred.iter().zip(&adv_pred))
            .map(|(im, (c, p))| [im.id.to_string(), im.label.to_string(), c.to_string(), p.to_string()]),
    )?;
    let (clean, robust) = (accuracy(&clean_pred, &y), accuracy(&adv_pred, &y));
    write_json(
        &run.manifest.output("summary.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "command": "attack",
            "checkpoint_hash": target.hash(),
            "source_hash": source.hash(),
            "eps": a.pgd.eps,
            "alpha": a.pgd.alpha,
            "steps": a.pgd.steps,
            "images": val.len(),
            "clean_accuracy": clean,
            "adversarial_accuracy": robust,
        }),
    )?;
    println!("clean_accuracy {clean:.4} adversarial_accuracy {robust:.4}");
    run.finish()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Scope {
    Global,
    PerImage,
}

#[derive(Debug, Args)]
pub struct LearnMaskArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = Scope::Global)]
    pub scope: Scope,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    /// Regularizer norm order, 1 or 2.
    #[arg(long, default_value = "1", value_parser = super::parse_from_str::<Norm>)]
    pub p: Norm,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_iter: usize,
    /// Images per step (global) or problems per forward pass (per-image).
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 50)]
    pub patience: usize,
    /// Use only the first N validation images (0 = all).
    #[arg(long, default_value_t = 0)]
    pub limit: usize,
    /// Replace the images by PGD examples crafted against this checkpoint.
    #[arg(long)]
    pub attack_checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub pgd: PgdArgs,
    /// Keep every N-th objective value in the per-image trace.
    #[arg(long, default_value_t = 10)]
    pub trace_every: usize,
}

fn mask_file(mask: Mask, a: &LearnMaskArgs, ck: &Checkpoint, image: Option<&LabeledImage>) -> MaskFile {
    MaskFile {
        mask,
        meta: MaskMeta {
            lambda: a.lambda,
            norm: a.p,
            seed: a.common.seed,
            checkpoint: ck.hash(),
            image: image.map(|i| i.id),
            label: image.map(|i| i.label),
            model: Some(ck.meta.augment.kind),
        },
    }
}

fn trace_rows(image: &str, o: &MaskOutcome, every: usize) -> Vec<[String; 4]> {
    let last = o.trace.len().saturating_sub(1);
    o.trace
        .iter()
        .enumerate()
        .filter(|(i, _)| i % every == 0 || *i == last)
        .map(|(_, t)| [image.to_string(), t.iter.to_string(), t.objective.to_string(), t.best.to_string()])
        .collect()
}

pub(super) fn learn_mask(a: LearnMaskArgs, mut run: Run) -> Result<(), CliError> {
    if a.trace_every == 0 {
        return Err(CliError::Usage("--trace-every must be positive".into()));
    }
    let split = a.data.load(&mut run.manifest)?;
    let ck = load_checkpoint(&a.checkpoint, &mut run)?;
    let mut images = take_limit(&split.val, a.limit).to_vec();
    if let Some(p) = &a.attack_checkpoint {
        let src = load_checkpoint(p, &mut run)?;
        let (raw, y) = raw_and_labels(&images);
        let adv = pgd_attack(&src.net, src.meta.mean, src.meta.std, &raw, &y, a.pgd.params())?;
        for (im, px) in images.iter_mut().zip(adv.chunks(raw.len() / y.len().max(1))) {
            im.pixels = px.to_vec();
        }
    }
    let cfg = MaskLearnConfig {
        lambda: a.lambda,
        norm: a.p,
        lr: a.lr,
        max_iter: a.max_iter,
        batch_size: a.batch_size,
        seed: a.common.seed,
        tol: a.tol,
        patience: a.patience,
    };
    let masks_dir = run.root().join("masks");
    std::fs::create_dir_all(&masks_dir).map_err(|e| crate::Error::io(&masks_dir, e))?;
    let header = ["image", "iter", "objective", "best"];
    let summary = match a.scope {
        Scope::Global => {
            let o = learn_mask_global(&ck, &images, &cfg)?;
            let base = val_accuracy(&ck, &images, None)?;
            let masked = val_accuracy(&ck, &images, Some(&o.mask))?;
            write_csv(&run.manifest.output("trace.csv"), &header, trace_rows("global", &o, 1))?;
            let f = mask_file(o.mask.clone(), &a, &ck, None);
            f.save(&run.manifest.output("masks/global.smsk"))?;
            println!("global mask l1 {:.3} accuracy {masked:.4} (unmasked {base:.4})", o.mask.l1());
            json!({
                "scope": "global",
                "masks": 1,
                "images": images.len(),
                "l1": o.mask.l1(),
                "zero_fraction": o.mask.zero_fraction(),
                "best_objective": o.best_objective,
                "best_iter": o.best_iter,
                "iterations": o.iterations,
                "clamp_events": o.clamp_events,
                "accuracy_unmasked": base,
                "accuracy_masked": masked,
            })
        }
        Scope::PerImage => {
            let results = learn_masks_single(&ck, &images, &cfg)?;
            let (mut trace, mut skipped) = (Vec::new(), Vec::new());
            let mut learned = 0usize;
            let mut zero = 0.0;
            for (im, r) in images.iter().zip(results) {
                match r {
                    SingleResult::Learned(o) => {
                        learned += 1;
                        zero += o.mask.zero_fraction();
                        trace.extend(trace_rows(&im.id.to_string(), &o, a.trace_every));
                        let f = mask_file(o.mask, &a, &ck, Some(im));
                        f.save(&run.manifest.output(format!("masks/img_{:06}.smsk", im.id)))?;
                    }
                    SingleResult::Skipped { predicted } => {
                        skipped.push([im.id.to_string(), im.label.to_string(), predicted.to_string()]);
                    }
                }
            }
            write_csv(&run.manifest.output("trace.csv"), &header, trace)?;
            write_csv(&run.manifest.output("skipped.csv"), &["image", "label", "predicted"], &skipped)?;
            println!("{learned} masks learned, {} images skipped", skipped.len());
            json!({
                "scope": "per-image",
                "masks": learned,
                "skipped": skipped.len(),
                "images": images.len(),
                "mean_zero_fraction": if learned > 0 { zero / learned as f64 } else { 0.0 },
            })
        }
    };
    let mut summary = summary;
    let obj = summary.as_object_mut().expect("summary is an object");
    obj.insert("schema_version".into(), json!(SCHEMA_VERSION));
    obj.insert("command".into(), json!("learn-mask"));
    obj.insert("checkpoint_hash".into(), json!(ck.hash()));
    obj.insert("model".into(), json!(ck.meta.augment.kind.as_str()));
    obj.insert("adversarial_inputs".into(), json!(a.attack_checkpoint.is_some()));
    write_json(&run.manifest.output("summary.json"), &summary)?;
    run.finish()
}
