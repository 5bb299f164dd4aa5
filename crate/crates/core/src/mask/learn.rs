use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{symmetrize_in_place, Mask};
use crate::autodiff::{AdamConfig, AdamState, Reduction, Tape, Tensor};
use crate::data::augment::mix;
use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::model::{argmax, Checkpoint};

/// Cap on the squared loss gap inside `exp`.
pub const CLAMP_EXPONENT: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
}

impl Norm {
    pub fn order(self) -> u8 {
        match self {
            Norm::L1 => 1,
            Norm::L2 => 2,
        }
    }

    pub fn of(m: &[f64], norm: Norm) -> f64 {
        match norm {
            Norm::L1 => m.iter().map(|v| v.abs()).sum(),
            Norm::L2 => m.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.order())
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" => Ok(Norm::L1),
            "2" => Ok(Norm::L2),
            other => Err(Error::InvalidArgument(format!("norm order must be 1 or 2, got {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskLearnConfig {
    pub lambda: f64,
    pub norm: Norm,
    pub lr: f64,
    pub max_iter: usize,
    /// Minibatch size for global masks; number of images optimized side by
    /// side for single-image masks (results do not depend on it).
    pub batch_size: usize,
    pub seed: u64,
    /// Stop once the best objective improved by less than this over `patience` iterations.
    pub tol: f64,
    pub patience: usize,
}

impl Default for MaskLearnConfig {
    fn default() -> Self {
        MaskLearnConfig {
            lambda: 1e-3,
            norm: Norm::L1,
            lr: 1e-3,
            max_iter: 2000,
            batch_size: 32,
            seed: 0,
            tol: 1e-6,
            patience: 50,
        }
    }
}

impl MaskLearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument("lambda must be a finite non-negative number".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument("mask learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidArgument("patience must be positive".into()));
        }
        Ok(())
    }
}

/// One evaluation of the objective and its gradient with respect to every
/// (untied) mask entry.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveEval {
    pub value: f64,
    pub invariance: f64,
    pub regularizer: f64,
    pub grad: Vec<f64>,
    /// Samples whose exponent hit [`CLAMP_EXPONENT`].
    pub clamped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TracePoint {
    pub iter: usize,
    pub objective: f64,
    pub best: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskOutcome {
    pub mask: Mask,
    pub best_objective: f64,
    pub best_iter: usize,
    pub iterations: usize,
    pub clamp_events: usize,
    pub trace: Vec<TracePoint>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SingleResult {
    Learned(Box<MaskOutcome>),
    /// The frozen model misclassifies the image, so no mask is learned.
    Skipped {
        predicted: usize,
    },
}

impl SingleResult {
    pub fn outcome(&self) -> Option<&MaskOutcome> {
        match self {
            SingleResult::Learned(o) => Some(o),
            SingleResult::Skipped { .. } => None,
        }
    }
}

/// `Σ exp([L(Φ(x̄),y) − L(Φ(x),y)]²)` for a stack of normalized images, with
/// either one shared `[d, d]` mask or one mask per image. The reference
/// losses are constants. Each term is multiplied by `weight`.
fn invariance(
    ckpt: &Checkpoint,
    x: &[f64],
    labels: &[usize],
    reference: &[f64],
    masks: Tensor,
    weight: f64,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let d = ckpt.net.arch.side;
    let n = labels.len();
    let mut tape = Tape::new();
    let params = ckpt.net.register(&mut tape, false);
    let xv = tape.leaf(Tensor::new(&[n, 1, d, d], x.to_vec())?);
    let mv = tape.leaf(masks.with_grad());
    let filtered = tape.spectral_filter(xv, mv)?;
    let z = ckpt.net.forward(&mut tape, filtered, &params)?;
    let losses = tape.cross_entropy(z, labels, Reduction::None)?;
    let gap = tape.sub_const(losses, reference)?;
    let sq = tape.square(gap);
    let e = tape.exp_clamped(sq, CLAMP_EXPONENT);
    let clamped = tape.clamp_count(e);
    let terms: Vec<f64> = tape.value(e).data().iter().map(|t| t * weight).collect();
    let total = tape.sum(e);
    let total = tape.scale(total, weight);
    tape.backward(total)?;
    let grad = tape.grad(mv).map(<[f64]>::to_vec).unwrap_or_default();
    Ok((terms, grad, clamped))
}

fn regularizer_grad(m: &[f64], norm: Norm, lambda: f64) -> Vec<f64> {
    match norm {
        Norm::L1 => m.iter().map(|v| lambda * sign(*v)).collect(),
        Norm::L2 => {
            let n = Norm::of(m, Norm::L2);
            if n == 0.0 {
                vec![0.0; m.len()]
            } else {
                m.iter().map(|v| lambda * v / n).collect()
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_images(ckpt: &Checkpoint, images: &[f64], labels: &[usize]) -> Result<()> {
    let dd = ckpt.net.arch.side * ckpt.net.arch.side;
    if images.len() != labels.len() * dd || labels.is_empty() {
        return Err(Error::shape(
            "mask_objective",
            format!("{} pixel values for {} labels", images.len(), labels.len()),
        ));
    }
    Ok(())
}

fn check_mask(ckpt: &Checkpoint, mask: &Mask) -> Result<()> {
    if mask.side() != ckpt.net.arch.side {
        return Err(Error::shape(
            "mask_objective",
            format!("mask side {} but model expects {}", mask.side(), ckpt.net.arch.side),
        ));
    }
    Ok(())
}

/// Objective value and gradient on a batch of raw `[0, 1]` images. For
/// `p = 1` the gradient of `|m|` at `m = 0` is taken as 0.
pub fn mask_objective(
    ckpt: &Checkpoint,
    mask: &Mask,
    images: &[f64],
    labels: &[usize],
    cfg: &MaskLearnConfig,
) -> Result<ObjectiveEval> {
    check_mask(ckpt, mask)?;
    check_images(ckpt, images, labels)?;
    let x = ckpt.normalize(images);
    let reference = ckpt.net.losses(&x, labels)?;
    objective_normalized(ckpt, mask, &x, labels, &reference, 1.0, cfg)
}

fn objective_normalized(
    ckpt: &Checkpoint,
    mask: &Mask,
    x: &[f64],
    labels: &[usize],
    reference: &[f64],
    weight: f64,
    cfg: &MaskLearnConfig,
) -> Result<ObjectiveEval> {
    let d = mask.side();
    let t = Tensor::new(&[d, d], mask.values().to_vec())?;
    let (terms, mut grad, clamped) = invariance(ckpt, x, labels, reference, t, weight)?;
    let invariance: f64 = terms.iter().sum();
    let regularizer = cfg.lambda * Norm::of(mask.values(), cfg.norm);
    for (g, r) in grad.iter_mut().zip(regularizer_grad(mask.values(), cfg.norm, cfg.lambda)) {
        *g += r;
    }
    Ok(ObjectiveEval { value: invariance + regularizer, invariance, regularizer, grad, clamped })
}

/// Objective without gradient over a full set, chunked.
fn objective_value(
    ckpt: &Checkpoint,
    mask: &Mask,
    x: &[f64],
    labels: &[usize],
    reference: &[f64],
    cfg: &MaskLearnConfig,
) -> Result<f64> {
    let filtered = super::filter_images(x, mask)?;
    let losses = ckpt.net.losses(&filtered, labels)?;
    let inv: f64 = losses.iter().zip(reference).map(|(l, r)| ((l - r).powi(2)).min(CLAMP_EXPONENT).exp()).sum();
    Ok(inv + cfg.lambda * Norm::of(mask.values(), cfg.norm))
}

/// Adam on the symmetrized gradient. For `p = 1` the ℓ1 term uses the
/// orthant-wise pseudo-gradient and entries that would cross zero are set to
/// exactly zero, which is what makes the learned masks sparse.
struct MaskOptimizer {
    d: usize,
    state: AdamState,
    norm: Norm,
    lambda: f64,
}

impl MaskOptimizer {
    fn new(d: usize, cfg: &MaskLearnConfig) -> Self {
        MaskOptimizer {
            d,
            state: AdamState::new(d * d, AdamConfig { lr: cfg.lr, ..Default::default() }),
            norm: cfg.norm,
            lambda: cfg.lambda,
        }
    }

    /// `smooth` is the gradient of the invariance term only.
    fn step(&mut self, values: &mut [f64], smooth: &[f64]) -> Result<()> {
        let mut g = smooth.to_vec();
        symmetrize_in_place(&mut g, self.d);
        match self.norm {
            Norm::L2 => {
                for (gi, r) in g.iter_mut().zip(regularizer_grad(values, Norm::L2, self.lambda)) {
                    *gi += r;
                }
                self.state.step(values, &g)?;
            }
            Norm::L1 => {
                let lam = self.lambda;
                for (gi, &w) in g.iter_mut().zip(values.iter()) {
                    *gi = if w != 0.0 {
                        *gi + lam * sign(w)
                    } else if *gi + lam < 0.0 {
                        *gi + lam
                    } else if *gi - lam > 0.0 {
                        *gi - lam
                    } else {
                        0.0
                    };
                }
                let before = values.to_vec();
                self.state.step(values, &g)?;
                for ((w, &w0), &gi) in values.iter_mut().zip(&before).zip(&g) {
                    let orthant = if w0 != 0.0 { sign(w0) } else { -sign(gi) };
                    if sign(*w) != orthant {
                        *w = 0.0;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Tracks the best objective and the early-stopping window.
struct Progress {
    best: f64,
    best_iter: usize,
    best_values: Vec<f64>,
    history: Vec<f64>,
}

impl Progress {
    fn new(initial: f64, values: &[f64]) -> Self {
        Progress { best: initial, best_iter: 0, best_values: values.to_vec(), history: vec![initial] }
    }

    fn record(&mut self, iter: usize, objective: f64, values: &[f64]) {
        if objective < self.best {
            self.best = objective;
            self.best_iter = iter;
            self.best_values.copy_from_slice(values);
        }
        self.history.push(self.best);
    }

    fn converged(&self, patience: usize, tol: f64) -> bool {
        let n = self.history.len();
        n > patience && self.history[n - 1 - patience] - self.history[n - 1] < tol
    }
}

fn assert_tied(values: &[f64], d: usize) {
    debug_assert!(Mask::from_values(d, values.to_vec()).is_ok(), "optimizer step broke conjugate tying");
}

/// Minibatch Adam over the validation images, starting from `M ≡ 1`. Each
/// minibatch estimate rescales the invariance sum to the full set, and the
/// full objective is evaluated once per pass; the mask with the lowest full
/// objective is returned.
pub fn learn_mask_global(ckpt: &Checkpoint, images: &[LabeledImage], cfg: &MaskLearnConfig) -> Result<MaskOutcome> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::InvalidArgument("no images to learn a mask from".into()));
    }
    let d = ckpt.net.arch.side;
    let n = images.len();
    let x: Vec<f64> = images.iter().flat_map(|im| ckpt.normalize(&im.pixels)).collect();
    let labels: Vec<usize> = images.iter().map(|im| im.label).collect();
    check_images(ckpt, &x, &labels)?;
    let reference = ckpt.net.losses(&x, &labels)?;
    let dd = d * d;

    let mut mask = Mask::ones(d)?;
    let mut values = mask.values().to_vec();
    let mut opt = MaskOptimizer::new(d, cfg);
    let initial = objective_value(ckpt, &mask, &x, &labels, &reference, cfg)?;
    let mut progress = Progress::new(initial, &values);
    let mut trace = vec![TracePoint { iter: 0, objective: initial, best: initial }];
    let batch = cfg.batch_size.min(n);
    let weight = n as f64 / batch as f64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut pass = 0u64;
    let mut clamp_events = 0;
    let mut iterations = 0;

    for iter in 1..=cfg.max_iter {
        if cursor + batch > n {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, pass, 0x6d61736b));
            order.shuffle(&mut rng);
            cursor = 0;
            pass += 1;
        }
        let idx = &order[cursor..cursor + batch];
        cursor += batch;
        let bx: Vec<f64> = idx.iter().flat_map(|&i| x[i * dd..][..dd].iter().copied()).collect();
        let by: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let br: Vec<f64> = idx.iter().map(|&i| reference[i]).collect();
        let t = Tensor::new(&[d, d], values.clone())?;
        let (terms, grad, clamped) = invariance(ckpt, &bx, &by, &br, t, weight)?;
        let estimate = terms.iter().sum::<f64>() + cfg.lambda * Norm::of(&values, cfg.norm);
        if !estimate.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteObjective(iter));
        }
        if clamped > 0 {
            log::warn!("iteration {iter}: {clamped} exponent(s) clamped at {CLAMP_EXPONENT}");
            clamp_events += clamped;
        }
        opt.step(&mut values, &grad)?;
        assert_tied(&values, d);
        iterations = iter;

        let pass_end = cursor + batch > n;
        if pass_end || iter == cfg.max_iter {
            mask = Mask::from_values(d, values.clone())?;
            let full = objective_value(ckpt, &mask, &x, &labels, &reference, cfg)?;
            if !full.is_finite() {
                return Err(Error::NonFiniteObjective(iter));
            }
            progress.record(iter, full, &values);
            trace.push(TracePoint { iter, objective: full, best: progress.best });
            let evals_per_window = cfg.patience.div_ceil(n.div_ceil(batch).max(1)).max(1);
            if progress.converged(evals_per_window, cfg.tol) {
                break;
            }
        }
    }

    Ok(MaskOutcome {
        mask: Mask::from_values(d, progress.best_values)?,
        best_objective: progress.best,
        best_iter: progress.best_iter,
        iterations,
        clamp_events,
        trace,
    })
}

/// Mask for one image. Skipped when the model misclassifies it.
pub fn learn_mask_single(ckpt: &Checkpoint, image: &LabeledImage, cfg: &MaskLearnConfig) -> Result<SingleResult> {
    Ok(learn_masks_single(ckpt, std::slice::from_ref(image), cfg)?.remove(0))
}

struct Job {
    slot: usize,
    x: Vec<f64>,
    label: usize,
    reference: f64,
    values: Vec<f64>,
    opt: MaskOptimizer,
    progress: Progress,
    trace: Vec<TracePoint>,
    clamp_events: usize,
    iterations: usize,
}

/// Independent single-image masks for every image. Up to `batch_size`
/// problems share each forward pass; since the objective separates over
/// images, every result equals what a lone run on that image would give.
pub fn learn_masks_single(
    ckpt: &Checkpoint,
    images: &[LabeledImage],
    cfg: &MaskLearnConfig,
) -> Result<Vec<SingleResult>> {
    cfg.validate()?;
    let d = ckpt.net.arch.side;
    let dd = d * d;
    let mut results: Vec<Option<SingleResult>> = vec![None; images.len()];
    let mut pending = Vec::new();
    for (slot, im) in images.iter().enumerate() {
        if im.pixels.len() != dd {
            return Err(Error::shape("learn_mask_single", format!("image {} has {} values", im.id, im.pixels.len())));
        }
        let x = ckpt.normalize(&im.pixels);
        let logits = ckpt.net.logits(&x)?;
        let predicted = argmax(&logits);
        if predicted != im.label {
            results[slot] = Some(SingleResult::Skipped { predicted });
            continue;
        }
        let reference = ckpt.net.losses(&x, &[im.label])?[0];
        let values = vec![1.0; dd];
        let initial = 1.0 + cfg.lambda * Norm::of(&values, cfg.norm);
        pending.push(Job {
            slot,
            x,
            label: im.label,
            reference,
            opt: MaskOptimizer::new(d, cfg),
            progress: Progress::new(initial, &values),
            trace: vec![TracePoint { iter: 0, objective: initial, best: initial }],
            values,
            clamp_events: 0,
            iterations: 0,
        });
    }

    let mut finished = Vec::with_capacity(pending.len());
    for group in chunk_owned(pending, cfg.batch_size) {
        finished.extend(run_group(ckpt, group, cfg)?);
    }
    for job in finished {
        results[job.slot] = Some(SingleResult::Learned(Box::new(MaskOutcome {
            mask: Mask::from_values(d, job.progress.best_values)?,
            best_objective: job.progress.best,
            best_iter: job.progress.best_iter,
            iterations: job.iterations,
            clamp_events: job.clamp_events,
            trace: job.trace,
        })));
    }
    Ok(results.into_iter().map(|r| r.expect("every image handled")).collect())
}

fn chunk_owned<T>(items: Vec<T>, size: usize) -> Vec<Vec<T>> {
    let mut out = Vec::new();
    let mut it = items.into_iter().peekable();
    while it.peek().is_some() {
        out.push(it.by_ref().take(size).collect());
    }
    out
}

fn run_group(ckpt: &Checkpoint, mut active: Vec<Job>, cfg: &MaskLearnConfig) -> Result<Vec<Job>> {
    let d = ckpt.net.arch.side;
    let dd = d * d;
    let mut done = Vec::with_capacity(active.len());
    let mut iter = 0;
    while !active.is_empty() && iter < cfg.max_iter {
        iter += 1;
        let n = active.len();
        let x: Vec<f64> = active.iter().flat_map(|j| j.x.iter().copied()).collect();
        let labels: Vec<usize> = active.iter().map(|j| j.label).collect();
        let reference: Vec<f64> = active.iter().map(|j| j.reference).collect();
        let masks: Vec<f64> = active.iter().flat_map(|j| j.values.iter().copied()).collect();
        let (terms, grad, _) = invariance(ckpt, &x, &labels, &reference, Tensor::new(&[n, d, d], masks)?, 1.0)?;
        let mut still = Vec::with_capacity(n);
        for (k, mut job) in active.into_iter().enumerate() {
            // Objective of the mask as it was before this step.
            let objective = terms[k] + cfg.lambda * Norm::of(&job.values, cfg.norm);
            let g = &grad[k * dd..][..dd];
            if !objective.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteObjective(iter));
            }
            if terms[k] >= CLAMP_EXPONENT.exp() {
                log::warn!("iteration {iter}: exponent clamped at {CLAMP_EXPONENT}");
                job.clamp_events += 1;
            }
            if iter > 1 {
                job.progress.record(iter - 1, objective, &job.values);
                job.trace.push(TracePoint { iter: iter - 1, objective, best: job.progress.best });
            }
            if job.progress.converged(cfg.patience, cfg.tol) {
                done.push(job);
                continue;
            }
            job.opt.step(&mut job.values, g)?;
            assert_tied(&job.values, d);
            job.iterations = iter;
            still.push(job);
        }
        active = still;
    }
    // Score the final step of jobs that ran out of iterations.
    if !active.is_empty() {
        let n = active.len();
        let x: Vec<f64> = active.iter().flat_map(|j| j.x.iter().copied()).collect();
        let labels: Vec<usize> = active.iter().map(|j| j.label).collect();
        let reference: Vec<f64> = active.iter().map(|j| j.reference).collect();
        let masks: Vec<f64> = active.iter().flat_map(|j| j.values.iter().copied()).collect();
        let (terms, _, _) = invariance(ckpt, &x, &labels, &reference, Tensor::new(&[n, d, d], masks)?, 1.0)?;
        for (k, mut job) in active.into_iter().enumerate() {
            let objective = terms[k] + cfg.lambda * Norm::of(&job.values, cfg.norm);
            job.progress.record(iter, objective, &job.values);
            job.trace.push(TracePoint { iter, objective, best: job.progress.best });
            done.push(job);
        }
    }
    done.sort_by_key(|j| j.slot);
    Ok(done)
}
