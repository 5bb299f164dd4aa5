use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::MaskSet;
use crate::data::augment::mix;
use crate::error::{Error, Result};
use crate::model::argmax;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub seed: u64,
    /// ℓ2 penalty on the weights (not the bias).
    pub l2: f64,
    pub test_fraction: f64,
    pub max_iter: usize,
    /// Stop when the gradient norm falls below this.
    pub tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { seed: 0, l2: 1e-4, test_fraction: 0.2, max_iter: 3000, tol: 1e-6 }
    }
}

/// Multinomial logistic regression on z-scored features. Features that are
/// constant on the training rows are dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeModel {
    classes: usize,
    features: Vec<usize>,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    /// `classes × features.len()`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ProbeModel {
    fn standardize(&self, row: &[f64]) -> Vec<f64> {
        self.features.iter().enumerate().map(|(j, &f)| (row[f] - self.mean[j]) * self.inv_std[j]).collect()
    }

    pub fn scores(&self, row: &[f64]) -> Vec<f64> {
        let z = self.standardize(row);
        let k = z.len();
        (0..self.classes)
            .map(|c| self.bias[c] + self.weights[c * k..][..k].iter().zip(&z).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        argmax(&self.scores(row))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub train_accuracy: f64,
    /// Test accuracy per class; `None` when a class has no test rows.
    pub per_class: Vec<Option<f64>>,
    pub train_size: usize,
    pub test_size: usize,
    pub iterations: usize,
}

fn fit(rows: &[&[f64]], labels: &[usize], classes: usize, cfg: &ProbeConfig) -> (ProbeModel, usize) {
    let n = rows.len();
    let dim = rows[0].len();
    let mut features = Vec::new();
    let mut mean = Vec::new();
    let mut inv_std = Vec::new();
    for f in 0..dim {
        let m = rows.iter().map(|r| r[f]).sum::<f64>() / n as f64;
        let var = rows.iter().map(|r| (r[f] - m).powi(2)).sum::<f64>() / n as f64;
        if var > 1e-24 {
            features.push(f);
            mean.push(m);
            inv_std.push(1.0 / var.sqrt());
        }
    }
    let k = features.len();
    let mut model =
        ProbeModel { classes, features, mean, inv_std, weights: vec![0.0; classes * k], bias: vec![0.0; classes] };
    let z: Vec<Vec<f64>> = rows.iter().map(|r| model.standardize(r)).collect();

    // Step 1/L with L bounding the Hessian: the softmax block is at most ½,
    // times the top eigenvalue of the Gram matrix of [z, 1] / n.
    let lmax = top_gram_eigenvalue(&z, cfg.seed);
    let step = 1.0 / (0.5 * lmax + cfg.l2);

    let mut iterations = 0;
    for it in 1..=cfg.max_iter {
        iterations = it;
        let mut gw = vec![0.0; classes * k];
        let mut gb = vec![0.0; classes];
        for (zi, &y) in z.iter().zip(labels) {
            let logits: Vec<f64> = (0..classes)
                .map(|c| model.bias[c] + model.weights[c * k..][..k].iter().zip(zi).map(|(w, x)| w * x).sum::<f64>())
                .collect();
            let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let total: f64 = exps.iter().sum();
            for c in 0..classes {
                let r = exps[c] / total - if c == y { 1.0 } else { 0.0 };
                gb[c] += r / n as f64;
                for (g, x) in gw[c * k..][..k].iter_mut().zip(zi) {
                    *g += r * x / n as f64;
                }
            }
        }
        for (g, w) in gw.iter_mut().zip(&model.weights) {
            *g += cfg.l2 * w;
        }
        let norm = gw.iter().chain(&gb).map(|g| g * g).sum::<f64>().sqrt();
        if norm < cfg.tol {
            break;
        }
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= step * g;
        }
        for (b, g) in model.bias.iter_mut().zip(&gb) {
            *b -= step * g;
        }
    }
    (model, iterations)
}

/// Largest eigenvalue of `[Z 1][Z 1]ᵀ / n`, by power iteration on the
/// `n × n` Gram matrix.
fn top_gram_eigenvalue(z: &[Vec<f64>], seed: u64) -> f64 {
    let n = z.len();
    let gram: Vec<f64> = (0..n * n)
        .map(|ij| {
            let (i, j) = (ij / n, ij % n);
            (1.0 + z[i].iter().zip(&z[j]).map(|(a, b)| a * b).sum::<f64>()) / n as f64
        })
        .collect();
    let (value, _) = power_iteration(&gram, n, seed, 200);
    // Slack for the finite iteration count.
    value * 1.05 + 1e-12
}

/// Dominant eigenpair of a symmetric positive semi-definite matrix.
fn power_iteration(m: &[f64], n: usize, seed: u64, iters: usize) -> (f64, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut value = 0.0;
    for _ in 0..iters {
        let mv: Vec<f64> = (0..n).map(|i| m[i * n..][..n].iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
        let norm = mv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return (0.0, vec![0.0; n]);
        }
        value = norm;
        v = mv.into_iter().map(|x| x / norm).collect();
    }
    (value, v)
}

fn check_classes(labels: &[usize]) -> Result<usize> {
    let first = labels.first().copied();
    if labels.iter().all(|&l| Some(l) == first) {
        return Err(Error::InvalidArgument("linear probe needs at least two classes".into()));
    }
    Ok(labels.iter().max().map_or(0, |m| m + 1))
}

/// Logistic-regression probe on flattened masks with a seeded train/test
/// split. With `shuffle_labels` the labels are permuted before splitting.
pub fn linear_probe(masks: &MaskSet, shuffle_labels: bool, cfg: &ProbeConfig) -> Result<(ProbeReport, ProbeModel)> {
    let mut labels = masks.labels();
    let classes = check_classes(&labels)?;
    if !(0.0..1.0).contains(&cfg.test_fraction) {
        return Err(Error::InvalidArgument("test fraction must lie in [0, 1)".into()));
    }
    if shuffle_labels {
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, 2, 0x7072)));
    }
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, 1, 0x7072)));
    let n_test = ((n as f64 * cfg.test_fraction).round() as usize).min(n - 1);
    let (test, train) = order.split_at(n_test);
    let rows: Vec<&[f64]> = masks.entries().iter().map(|e| e.mask.values()).collect();
    let train_rows: Vec<&[f64]> = train.iter().map(|&i| rows[i]).collect();
    let train_labels: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let (model, iterations) = fit(&train_rows, &train_labels, classes, cfg);

    let hits = |idx: &[usize]| idx.iter().filter(|&&i| model.predict(rows[i]) == labels[i]).count();
    let mut per_class = vec![None; classes];
    for (c, slot) in per_class.iter_mut().enumerate() {
        let of_c: Vec<usize> = test.iter().copied().filter(|&i| labels[i] == c).collect();
        if !of_c.is_empty() {
            *slot = Some(hits(&of_c) as f64 / of_c.len() as f64);
        }
    }
    let frac = |h: usize, t: usize| if t == 0 { 0.0 } else { h as f64 / t as f64 };
    Ok((
        ProbeReport {
            accuracy: frac(hits(test), test.len()),
            train_accuracy: frac(hits(train), train.len()),
            per_class,
            train_size: train.len(),
            test_size: test.len(),
            iterations,
        },
        model,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    pub label: usize,
}

/// Coordinates of every row on the top two principal components.
pub fn pca_project(rows: &[Vec<f64>], seed: u64) -> Vec<(f64, f64)> {
    let n = rows.len();
    if n == 0 {
        return Vec::new();
    }
    let dim = rows[0].len();
    let mean: Vec<f64> = (0..dim).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let centered: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&mean).map(|(a, m)| a - m).collect()).collect();
    let mut cov = vec![0.0; dim * dim];
    for r in &centered {
        for i in 0..dim {
            for j in 0..dim {
                cov[i * dim + j] += r[i] * r[j] / n as f64;
            }
        }
    }
    let (l1, v1) = power_iteration(&cov, dim, seed, 500);
    for i in 0..dim {
        for j in 0..dim {
            cov[i * dim + j] -= l1 * v1[i] * v1[j];
        }
    }
    let (_, v2) = power_iteration(&cov, dim, mix(seed, 1, 0), 500);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    centered.iter().map(|r| (dot(r, &v1), dot(r, &v2))).collect()
}

/// Probe (fitted on the seeded training split, true labels) class scores of
/// every mask, projected on their top two principal components.
pub fn pca_scatter(masks: &MaskSet, cfg: &ProbeConfig) -> Result<Vec<ScatterPoint>> {
    if masks.len() < 3 {
        return Err(Error::InvalidArgument("scatter needs at least three masks".into()));
    }
    let (_, model) = linear_probe(masks, false, cfg)?;
    let scores: Vec<Vec<f64>> = masks.entries().iter().map(|e| model.scores(e.mask.values())).collect();
    Ok(pca_project(&scores, cfg.seed)
        .into_iter()
        .zip(masks.entries())
        .map(|((x, y), e)| ScatterPoint { x, y, label: e.label })
        .collect())
}
