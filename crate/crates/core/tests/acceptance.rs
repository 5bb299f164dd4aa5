//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fail. The expensive criteria share one pipeline: a
//! vanilla model N and a PGD-trained model A on synthetic 5-class data,
//! single-image masks of N on clean images and of A on PGD images crafted
//! against N.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use fmask::analysis::{exceed_fraction, linear_probe, MaskEntry, MaskSet, ProbeConfig};
use fmask::data::augment::{AugmentKind, AugmentPolicy, PgdParams};
use fmask::data::synthetic::generate_synthetic;
use fmask::data::{DatasetSplit, LabeledImage};
use fmask::demos::{intermodulation_check, self_convolution_check, sinc_factor};
use fmask::mask::{
    complementary_mask, filter_images, learn_mask_global, learn_masks_single, mask_apply, mask_objective, Mask,
    MaskLearnConfig, SingleResult,
};
use fmask::model::{accuracy, pgd_attack, train, Architecture, Checkpoint, CheckpointMeta, Network, TrainConfig};
use fmask::spectral::{conjugate_index, fft2, BandSpec};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CLASSES: usize = 5;
const PER_CLASS: usize = 200;
const EPOCHS: usize = 20;
/// Validation images whose masks feed the paired comparisons.
const PAIRED_IMAGES: usize = 150;

struct Line {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
    budget: Duration,
}

#[derive(Default)]
struct Report {
    lines: Vec<Line>,
}

impl Report {
    /// `check` returns `(property holds, detail)`; the line passes when the
    /// property holds within the time budget.
    fn run(
        &mut self,
        id: u32,
        name: &'static str,
        budget: Duration,
        check: impl FnOnce() -> Result<(bool, String), String>,
    ) {
        let t = Instant::now();
        let (ok, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        self.record(id, name, ok, detail, t.elapsed(), budget);
    }

    fn record(&mut self, id: u32, name: &'static str, ok: bool, detail: String, elapsed: Duration, budget: Duration) {
        let line = Line { id, name, pass: ok && elapsed <= budget, detail, elapsed, budget };
        println!(
            "{} [{:>2}] {}: {} ({:.1}s, budget {:.0}s)",
            if line.pass { "PASS" } else { "FAIL" },
            line.id,
            line.name,
            line.detail,
            line.elapsed.as_secs_f64(),
            line.budget.as_secs_f64()
        );
        self.lines.push(line);
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn e2s(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn random_grid(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..d * d).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Direct O(d⁴) 2D DFT with a shared twiddle table.
fn naive_dft2(x: &[f64], d: usize) -> Vec<Complex64> {
    let tw: Vec<Complex64> = (0..d).map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / d as f64)).collect();
    let mut out = vec![Complex64::new(0.0, 0.0); d * d];
    for u in 0..d {
        for v in 0..d {
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..d {
                for c in 0..d {
                    acc += tw[(u * r + v * c) % d] * x[r * d + c];
                }
            }
            out[u * d + v] = acc;
        }
    }
    out
}

fn naive_dft1(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(j, v)| v * Complex64::from_polar(1.0, -2.0 * PI * (k * j % n) as f64 / n as f64))
                .sum()
        })
        .collect()
}

fn criterion_fft() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for d in [8, 16, 32, 64] {
        for _ in 0..20 {
            let x = random_grid(d, &mut rng);
            let fast = fft2(&x, d).map_err(e2s)?;
            let slow = naive_dft2(&x, d);
            for (i, s) in slow.iter().enumerate() {
                worst = worst.max((Complex64::new(fast.re()[i], fast.im()[i]) - s).norm());
            }
        }
    }
    Ok((worst < 1e-9, format!("max abs error {worst:.2e} (< 1e-9)")))
}

fn criterion_parseval() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let d = [8, 16, 32, 64][i % 4];
        let x = random_grid(d, &mut rng);
        let s = fft2(&x, d).map_err(e2s)?;
        let lhs: f64 = s.re().iter().zip(s.im()).map(|(a, b)| a * a + b * b).sum();
        let rhs = (d * d) as f64 * x.iter().map(|v| v * v).sum::<f64>();
        worst = worst.max((lhs - rhs).abs() / rhs);
    }
    Ok((worst < 1e-10, format!("max relative error {worst:.2e} (< 1e-10)")))
}

fn criterion_selfconv() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut lib_worst, mut oracle_worst) = (0.0f64, 0.0f64);
    for n in [32, 64] {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xhat = naive_dft1(&x.iter().map(|&v| Complex64::new(v, 0.0)).collect::<Vec<_>>());
        for k in [2u32, 3] {
            lib_worst = lib_worst.max(self_convolution_check(&x, k).map_err(e2s)?);
            // Independent check: direct DFT of x^k against repeated
            // circular convolution of the direct DFT.
            let lhs = naive_dft1(&x.iter().map(|v| Complex64::new(v.powi(k as i32), 0.0)).collect::<Vec<_>>());
            let mut conv = xhat.clone();
            for _ in 1..k {
                conv = (0..n).map(|m| (0..n).map(|j| conv[j] * xhat[(m + n - j) % n]).sum()).collect();
            }
            let scale = (n as f64).powi(1 - k as i32);
            for (a, b) in lhs.iter().zip(&conv) {
                oracle_worst = oracle_worst.max((a - b * scale).norm());
            }
        }
    }
    Ok((
        lib_worst < 1e-8 && oracle_worst < 1e-8,
        format!("library check {lib_worst:.2e}, direct oracle {oracle_worst:.2e} (< 1e-8)"),
    ))
}

fn criterion_intermod() -> Result<(bool, String), String> {
    let r = intermodulation_check(5, 3, 256).map_err(e2s)?;
    let expected = [(0, 256.0), (10, 64.0), (6, 64.0), (8, 128.0), (2, 128.0)];
    let peak_err = r
        .peaks
        .iter()
        .zip(expected)
        .map(|(&(b, m), (eb, em))| if b == eb { (m - em).abs() } else { f64::INFINITY })
        .fold(0.0, f64::max);
    Ok((
        peak_err < 1e-9 && r.off_support_max < 1e-9,
        format!("peak error {peak_err:.2e}, off-support max {:.2e}", r.off_support_max),
    ))
}

fn simpson_box(gamma: f64, a: f64, m: usize) -> f64 {
    // The imaginary part integrates an odd function to zero.
    let h = 2.0 * a / m as f64;
    let f = |t: f64| (2.0 * PI * gamma * t).cos();
    let inner: f64 = (1..m).map(|i| f(-a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(-a) + f(a) + inner) * h / 3.0
}

fn criterion_sinc() -> Result<(bool, String), String> {
    let a = 1.0;
    let worst = [0.1, 0.4, 0.7, 1.3, 1.9]
        .iter()
        .map(|&g| (simpson_box(g, a, 10_000) - sinc_factor(g, a)).abs())
        .fold(0.0, f64::max);
    let at_zero = sinc_factor(0.0, a);
    Ok((worst < 1e-8 && at_zero == 2.0 * a, format!("max abs error {worst:.2e} at 5 gammas, factor(0) = {at_zero}")))
}

fn toy_checkpoint() -> Checkpoint {
    Checkpoint {
        net: Network::init(Architecture::small_cnn(8, 3).expect("8x8 architecture"), 11),
        meta: CheckpointMeta {
            augment: AugmentPolicy::default(),
            seed: 11,
            epochs: 0,
            batch_size: 1,
            max_lr: 1e-3,
            best_epoch: 0,
            best_val_loss: 0.0,
            mean: 0.5,
            std: 0.25,
        },
    }
}

fn criterion_gradient() -> Result<(bool, String), String> {
    let d = 8;
    let ck = toy_checkpoint();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x: Vec<f64> = (0..3 * d * d).map(|_| rng.gen_range(0.0..1.0)).collect();
    let y = [0, 1, 2];
    let raw: Vec<f64> =
        (0..d * d).map(|_| rng.gen_range(0.2..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
    let mask = Mask::from_values(d, Mask::symmetrized(d, &raw)).map_err(e2s)?;
    let cfg = MaskLearnConfig { lambda: 0.05, ..Default::default() };
    let eval = mask_objective(&ck, &mask, &x, &y, &cfg).map_err(e2s)?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let i = rng.gen_range(0..d * d);
        let (cu, cv) = conjugate_index(i / d, i % d, d);
        let j = cu * d + cv;
        // Tied parameters move together; the directional derivative is
        // the sum of both entries' partials.
        let shifted = |delta: f64| -> Result<f64, String> {
            let mut v = mask.values().to_vec();
            v[i] += delta;
            if j != i {
                v[j] += delta;
            }
            let m = Mask::from_values(d, v).map_err(e2s)?;
            Ok(mask_objective(&ck, &m, &x, &y, &cfg).map_err(e2s)?.value)
        };
        let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
        let analytic = if j == i { eval.grad[i] } else { eval.grad[i] + eval.grad[j] };
        worst = worst.max((fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-8));
    }
    Ok((worst < 1e-4, format!("max relative error {worst:.2e} over 50 coordinates (< 1e-4)")))
}

fn raw(images: &[LabeledImage]) -> (Vec<f64>, Vec<usize>) {
    (images.iter().flat_map(|i| i.pixels.iter().copied()).collect(), images.iter().map(|i| i.label).collect())
}

fn predict(ck: &Checkpoint, pixels: &[f64], mask: Option<&Mask>) -> Result<Vec<usize>, String> {
    let mut x = ck.normalize(pixels);
    if let Some(m) = mask {
        x = filter_images(&x, m).map_err(e2s)?;
    }
    ck.net.predict(&x).map_err(e2s)
}

fn train_model(split: &DatasetSplit, kind: AugmentKind) -> Result<Checkpoint, String> {
    let cfg = TrainConfig { epochs: EPOCHS, seed: 1, augment: AugmentPolicy::of(kind), ..Default::default() };
    Ok(train(split, &cfg).map_err(e2s)?.checkpoint)
}

/// Per-image masks, one slot per input image (`None` when skipped).
fn single_masks(ck: &Checkpoint, images: &[LabeledImage]) -> Result<Vec<Option<Mask>>, String> {
    Ok(learn_masks_single(ck, images, &MaskLearnConfig::default())
        .map_err(e2s)?
        .into_iter()
        .map(|r| match r {
            SingleResult::Learned(o) => Some(o.mask),
            SingleResult::Skipped { .. } => None,
        })
        .collect())
}

fn mask_set(
    images: &[LabeledImage],
    masks: &[Option<Mask>],
    keep: impl Fn(usize) -> bool,
    model: AugmentKind,
) -> MaskSet {
    let entries = images
        .iter()
        .zip(masks)
        .enumerate()
        .filter(|(i, (_, m))| m.is_some() && keep(*i))
        .map(|(_, (im, m))| MaskEntry { mask: m.clone().expect("filtered"), id: im.id, label: im.label, model })
        .collect();
    MaskSet::new(entries).expect("uniform side")
}

fn fmask_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fmask")).args(args).env_remove("FMASK_OUT").output().map_err(e2s)?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("fmask {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("readable dir").flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).expect("under dir").to_path_buf(), std::fs::read(&p).expect("readable"));
            }
        }
    }
    out
}

/// Runs every subcommand into `root`, in pipeline order.
fn cli_pipeline(root: &Path) -> Result<(), String> {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let data = ["--synthetic", "--per-class", "30"];
    let with = |base: &[&str], extra: &[&str]| -> Vec<String> {
        base.iter().chain(data.iter()).chain(extra).map(|s| s.to_string()).collect()
    };
    let run = |v: Vec<String>| fmask_cli(&v.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    let (n_out, a_out) = (p("train_n"), p("train_a"));
    run(with(&["train", "--out", &n_out], &["--epochs", "6", "--seed", "3"]))?;
    run(with(
        &["train", "--out", &a_out],
        &["--epochs", "6", "--seed", "3", "--augment", "adversarial", "--steps", "3"],
    ))?;
    let (ck_n, ck_a) = (p("train_n/model.smck"), p("train_a/model.smck"));
    run(with(&["attack", "--out", &p("attack")], &["--checkpoint", &ck_n]))?;
    run(with(&["learn-mask", "--out", &p("global")], &["--checkpoint", &ck_n, "--max-iter", "30"]))?;
    let common = ["--scope", "per-image", "--max-iter", "30"];
    run(with(&["learn-mask", "--out", &p("masks_n")], &[&["--checkpoint", ck_n.as_str()][..], &common].concat()))?;
    run(with(
        &["learn-mask", "--out", &p("masks_a")],
        &[&["--checkpoint", ck_a.as_str(), "--attack-checkpoint", ck_n.as_str()][..], &common].concat(),
    ))?;
    let masks_n = p("masks_n/masks");
    run(vec![
        "analyze".into(),
        "--out".into(),
        p("analyze_self"),
        "--a".into(),
        masks_n.clone(),
        "--b".into(),
        masks_n.clone(),
    ])?;
    run(vec!["probe".into(), "--out".into(), p("probe"), "--masks".into(), masks_n])?;
    for demo in ["blue-shift", "intermodulation", "sinc", "selfconv"] {
        run(vec!["demo".into(), demo.into(), "--out".into(), p(&format!("demo_{demo}"))])?;
    }
    Ok(())
}

fn criterion_determinism() -> Result<(bool, String), String> {
    let tmp = tempfile::tempdir().map_err(e2s)?;
    let root = tmp.path().join("run");
    cli_pipeline(&root)?;
    let first = tree(&root);
    std::fs::remove_dir_all(&root).map_err(e2s)?;
    cli_pipeline(&root)?;
    let second = tree(&root);
    let differing: Vec<String> = first
        .keys()
        .chain(second.keys())
        .filter(|k| first.get(*k) != second.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    Ok((
        differing.is_empty() && !first.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts byte-identical across reruns of all six subcommands", first.len())
        } else {
            format!("differing artifacts: {differing:?}")
        },
    ))
}

fn main() {
    let mut rep = Report::default();
    let started = Instant::now();

    rep.run(1, "FFT matches direct DFT", secs(10), criterion_fft);
    rep.run(2, "Parseval", secs(1), criterion_parseval);
    rep.run(4, "self-convolution identity", secs(5), criterion_selfconv);
    rep.run(5, "intermodulation bins", secs(1), criterion_intermod);
    rep.run(6, "sinc damping vs quadrature", secs(1), criterion_sinc);
    rep.run(7, "mask gradient vs finite differences", secs(30), criterion_gradient);

    let split = generate_synthetic(CLASSES, PER_CLASS, 0).expect("synthetic data");
    let (val_raw, val_y) = raw(&split.val);

    let t = Instant::now();
    let n_model = train_model(&split, AugmentKind::None);
    let n_train_time = t.elapsed();
    let n_model = match n_model {
        Ok(m) => m,
        Err(e) => {
            rep.record(8, "vanilla baseline", false, format!("training failed: {e}"), n_train_time, secs(300));
            finish(rep, started);
        }
    };
    let base_acc = predict(&n_model, &val_raw, None).map(|p| accuracy(&p, &val_y)).unwrap_or(0.0);
    rep.record(
        8,
        "vanilla baseline",
        base_acc >= 0.95,
        format!("val accuracy {base_acc:.4} (>= 0.95)"),
        n_train_time,
        secs(300),
    );

    rep.run(3, "identity mask is exact", secs(60), || {
        let ones = Mask::ones(32).map_err(e2s)?;
        let x = n_model.normalize(&val_raw);
        let mut worst = 0.0f64;
        for img in x.chunks(1024).take(50) {
            let (y, _) = mask_apply(img, &ones).map_err(e2s)?;
            worst = worst.max(y.iter().zip(img).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
        let masked = accuracy(&predict(&n_model, &val_raw, Some(&ones))?, &val_y);
        Ok((
            worst < 1e-10 && masked == base_acc,
            format!("max deviation {worst:.2e}; accuracy {masked:.4} with mask, {base_acc:.4} without"),
        ))
    });

    rep.run(9, "global mask invariance and sparsity", secs(600), || {
        let o = learn_mask_global(&n_model, &split.val, &MaskLearnConfig::default()).map_err(e2s)?;
        let acc = accuracy(&predict(&n_model, &val_raw, Some(&o.mask))?, &val_y);
        let l1 = o.mask.l1();
        let limit = 0.5 * 1024.0;
        Ok((
            (base_acc - acc) <= 0.01 && l1 <= limit,
            format!("masked accuracy {acc:.4} vs {base_acc:.4}; l1 {l1:.1} (<= {limit})"),
        ))
    });

    // Adversarial model and attacks.
    let t = Instant::now();
    let a_model = train_model(&split, AugmentKind::Adversarial);
    let pgd = PgdParams::default();
    let attacks = a_model.and_then(|a| {
        let on_n = pgd_attack(&n_model.net, n_model.meta.mean, n_model.meta.std, &val_raw, &val_y, pgd).map_err(e2s)?;
        let on_a = pgd_attack(&a.net, a.meta.mean, a.meta.std, &val_raw, &val_y, pgd).map_err(e2s)?;
        Ok((a, on_n, on_a))
    });
    let (a_model, adv_vs_n) = match attacks {
        Ok((a, on_n, on_a)) => {
            let n_rob = accuracy(&predict(&n_model, &on_n, None).unwrap_or_default(), &val_y);
            let a_rob = accuracy(&predict(&a, &on_a, None).unwrap_or_default(), &val_y);
            rep.record(
                11,
                "adversarial pipeline",
                n_rob <= 0.20 && a_rob - n_rob >= 0.30,
                format!("PGD accuracy: vanilla {n_rob:.4} (<= 0.20), adversarially trained {a_rob:.4} (gap >= 0.30)"),
                t.elapsed(),
                secs(900),
            );
            (a, on_n)
        }
        Err(e) => {
            rep.record(11, "adversarial pipeline", false, format!("error: {e}"), t.elapsed(), secs(900));
            finish(rep, started);
        }
    };

    // Single-image masks on the paired subset.
    let subset = &split.val[..PAIRED_IMAGES];
    let adv_subset: Vec<LabeledImage> = subset
        .iter()
        .zip(adv_vs_n.chunks(1024))
        .map(|(im, px)| LabeledImage { id: im.id, pixels: px.to_vec(), label: im.label })
        .collect();
    let t = Instant::now();
    let n_masks = single_masks(&n_model, subset);
    let n_mask_time = t.elapsed();
    let n_masks = match n_masks {
        Ok(m) => m,
        Err(e) => {
            for (id, name) in [(10, "complementary mask degradation"), (12, "mask-based attack reversal")] {
                rep.record(id, name, false, format!("mask learning failed: {e}"), n_mask_time, secs(0));
            }
            finish(rep, started);
        }
    };
    let with_mask: Vec<usize> = (0..PAIRED_IMAGES).filter(|&i| n_masks[i].is_some()).collect();

    rep.run(10, "complementary mask degradation", secs(300), || {
        let (mut kept, mut comp) = (0usize, 0usize);
        for &i in &with_mask {
            let m = n_masks[i].as_ref().expect("filtered");
            let px = &subset[i].pixels;
            kept += usize::from(predict(&n_model, px, Some(m))?[0] == subset[i].label);
            comp += usize::from(predict(&n_model, px, Some(&complementary_mask(m)))?[0] == subset[i].label);
        }
        let n = with_mask.len().max(1) as f64;
        let (ka, ca) = (kept as f64 / n, comp as f64 / n);
        Ok((
            ka - ca >= 0.20,
            format!("accuracy {ka:.4} with M, {ca:.4} with M' over {} masks (drop >= 0.20)", with_mask.len()),
        ))
    });

    rep.run(12, "mask-based attack reversal", secs(600), || {
        let clean = with_mask.len() as f64 / PAIRED_IMAGES as f64;
        let mut restored = 0usize;
        for &i in &with_mask {
            let m = n_masks[i].as_ref().expect("filtered");
            restored += usize::from(predict(&n_model, &adv_subset[i].pixels, Some(m))?[0] == subset[i].label);
        }
        let raw_adv = accuracy(&predict(&n_model, &adv_vs_n[..PAIRED_IMAGES * 1024], None)?, &val_y[..PAIRED_IMAGES]);
        let rev = restored as f64 / PAIRED_IMAGES as f64;
        Ok((
            rev >= 0.8 * clean,
            format!("clean {clean:.4}, attacked {raw_adv:.4}, attacked + clean-image mask {rev:.4} (>= 0.8 x clean)"),
        ))
    });

    let t = Instant::now();
    let a_masks = single_masks(&a_model, &adv_subset);
    let paired = a_masks.map(|a| {
        let both = |i: usize| n_masks[i].is_some() && a[i].is_some();
        (mask_set(&adv_subset, &a, both, AugmentKind::Adversarial), mask_set(subset, &n_masks, both, AugmentKind::None))
    });
    let budget13 = secs(1800);
    let elapsed13 = n_mask_time + t.elapsed();
    match paired {
        Ok((set_a, set_n)) => {
            let bands = BandSpec::radial(32, 8).expect("bands");
            match exceed_fraction(&set_a, &set_n, &bands) {
                Ok(f) => rep.record(
                    13,
                    "low-frequency bias direction",
                    set_a.len() >= 100 && f[0] > 0.5 && f[7] < 0.5,
                    format!(
                        "{} pairs; exceed fraction lowest band {:.3} (> 0.5), highest band {:.3} (< 0.5)",
                        set_a.len(),
                        f[0],
                        f[7]
                    ),
                    elapsed13,
                    budget13,
                ),
                Err(e) => {
                    rep.record(13, "low-frequency bias direction", false, format!("error: {e}"), elapsed13, budget13)
                }
            }
        }
        Err(e) => rep.record(13, "low-frequency bias direction", false, format!("error: {e}"), elapsed13, budget13),
    }

    // The probe uses masks for the whole validation set.
    let t = Instant::now();
    let rest = single_masks(&n_model, &split.val[PAIRED_IMAGES..]);
    let rest_time = t.elapsed();
    match rest {
        Ok(rest) => {
            let all: Vec<Option<Mask>> = n_masks.iter().cloned().chain(rest).collect();
            rep.run(14, "mask separability", secs(300), || {
                let set = mask_set(&split.val, &all, |_| true, AugmentKind::None);
                let cfg = ProbeConfig::default();
                let (truth, _) = linear_probe(&set, false, &cfg).map_err(e2s)?;
                let (shuffled, _) = linear_probe(&set, true, &cfg).map_err(e2s)?;
                Ok((
                    truth.accuracy - shuffled.accuracy >= 0.20 && (0.10..=0.35).contains(&shuffled.accuracy),
                    format!(
                        "{} masks; probe accuracy {:.4} true labels, {:.4} shuffled (gap >= 0.20, shuffled in [0.10, 0.35])",
                        set.len(),
                        truth.accuracy,
                        shuffled.accuracy
                    ),
                ))
            });
        }
        Err(e) => {
            rep.record(14, "mask separability", false, format!("mask learning failed: {e}"), rest_time, secs(300))
        }
    }

    let pipeline = started.elapsed();
    rep.run(15, "determinism of every subcommand", pipeline, criterion_determinism);
    finish(rep, started);
}

fn finish(mut rep: Report, started: Instant) -> ! {
    rep.lines.sort_by_key(|l| l.id);
    let failed: Vec<u32> = rep.lines.iter().filter(|l| !l.pass).map(|l| l.id).collect();
    println!(
        "\n{} of {} criteria passed in {:.0}s{}",
        rep.lines.len() - failed.len(),
        rep.lines.len(),
        started.elapsed().as_secs_f64(),
        if failed.is_empty() { String::new() } else { format!("; failed: {failed:?}") }
    );
    std::process::exit(if failed.is_empty() && rep.lines.len() == 15 { 0 } else { 1 })
}
