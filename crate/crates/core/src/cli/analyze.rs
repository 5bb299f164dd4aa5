//! `analyze` and `probe`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::{json, Value};

use super::{parse_from_str, CliError, CommonArgs, Run};
use crate::analysis::{
    energy_profile, exceed_fraction, linear_probe, mask_diff_centered, pca_scatter, MaskEntry, MaskSet, ProbeConfig,
    ProbeReport,
};
use crate::data::augment::AugmentKind;
use crate::error::{Error, Result};
use crate::mask::MaskFile;
use crate::report::{bar_grid, hstack, render_png, write_csv, write_json, ColorRange, Colormap, SCHEMA_VERSION};
use crate::spectral::{fftshift, BandKind, BandSpec};

/// Loads one `.smsk` file, or every `.smsk` file of a directory in name
/// order. Masks without an image id are numbered by position.
pub fn load_mask_set(path: &Path) -> Result<(MaskSet, Vec<PathBuf>)> {
    let files = if path.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "smsk"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no .smsk files in {}", path.display())));
    }
    let mut entries = Vec::with_capacity(files.len());
    for (i, f) in files.iter().enumerate() {
        let mf = MaskFile::load(f)?;
        entries.push(MaskEntry {
            mask: mf.mask,
            id: mf.meta.image.unwrap_or(i as u64),
            label: mf.meta.label.unwrap_or(0),
            model: mf.meta.model.unwrap_or(AugmentKind::None),
        });
    }
    Ok((MaskSet::new(entries)?, files))
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// First mask set: a .smsk file or a directory of them.
    #[arg(long)]
    pub a: PathBuf,
    /// Optional second set, paired with the first by image id.
    #[arg(long)]
    pub b: Option<PathBuf>,
    #[arg(long, default_value = "radial", value_parser = parse_from_str::<BandKind>)]
    pub bands: BandKind,
    /// Number of bands.
    #[arg(long, default_value_t = 8)]
    pub k: usize,
}

fn mean_grid<'a>(grids: impl Iterator<Item = &'a [f64]>, len: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    let mut n = 0usize;
    for g in grids {
        acc.iter_mut().zip(g).for_each(|(a, v)| *a += v);
        n += 1;
    }
    acc.iter_mut().for_each(|a| *a /= n.max(1) as f64);
    acc
}

fn load_set(path: &Path, run: &mut Run) -> Result<MaskSet> {
    let (set, files) = load_mask_set(path)?;
    files.iter().for_each(|f| run.manifest.input(f));
    Ok(set)
}

fn probe_json(r: &ProbeReport) -> Value {
    json!({
        "accuracy": r.accuracy,
        "train_accuracy": r.train_accuracy,
        "per_class": r.per_class,
        "train_size": r.train_size,
        "test_size": r.test_size,
        "iterations": r.iterations,
    })
}

fn distinct_labels(set: &MaskSet) -> usize {
    let mut l = set.labels();
    l.sort_unstable();
    l.dedup();
    l.len()
}

pub(super) fn analyze(a: AnalyzeArgs, mut run: Run) -> std::result::Result<(), CliError> {
    let set_a = load_set(&a.a, &mut run)?;
    let set_b = a.b.as_ref().map(|p| load_set(p, &mut run)).transpose()?;
    let d = set_a.side().expect("sets are non-empty");
    if let Some(b) = &set_b {
        if b.side() != Some(d) {
            return Err(Error::shape("analyze", format!("set a has side {d}, set b has side {:?}", b.side())).into());
        }
    }
    let bands = BandSpec::new(a.bands, d, a.k)?;
    let by_id_b: BTreeMap<u64, &MaskEntry> = set_b.iter().flat_map(|s| s.entries()).map(|e| (e.id, e)).collect();

    let mut rows = Vec::new();
    for (name, set) in std::iter::once(("a", &set_a)).chain(set_b.iter().map(|s| ("b", s))) {
        for e in set.entries() {
            let energies = energy_profile(&e.mask, &bands)?.energies;
            let other = if name == "a" {
                by_id_b.get(&e.id).map(|p| energy_profile(&p.mask, &bands)).transpose()?
            } else {
                None
            };
            for (k, en) in energies.iter().enumerate() {
                let (lo, hi) = bands.range(k);
                let diff = other.as_ref().map(|o| (en - o.energies[k]).to_string()).unwrap_or_default();
                rows.push([
                    name.to_string(),
                    e.id.to_string(),
                    e.label.to_string(),
                    e.model.tag().to_string(),
                    k.to_string(),
                    lo.to_string(),
                    hi.to_string(),
                    en.to_string(),
                    diff,
                ]);
            }
        }
    }
    write_csv(
        &run.manifest.output("energy.csv"),
        &["set", "image", "label", "model", "band", "lo", "hi", "energy", "difference"],
        rows,
    )?;

    // Mean masks, centred, on one shared grayscale range.
    let dd = d * d;
    let mut means = vec![("a", mean_grid(set_a.entries().iter().map(|e| e.mask.values()), dd))];
    if let Some(b) = &set_b {
        means.push(("b", mean_grid(b.entries().iter().map(|e| e.mask.values()), dd)));
    }
    let centred: Vec<(&str, Vec<f64>)> =
        means.into_iter().map(|(n, g)| fftshift(&g, d).map(|c| (n, c))).collect::<Result<_>>()?;
    let range = ColorRange::fit(centred.iter().map(|(_, g)| g.as_slice()), Colormap::Grayscale);
    for (name, g) in &centred {
        render_png(g, d, Colormap::Grayscale, range, &run.manifest.output(format!("mask_{name}.png")))?;
    }

    let mut summary = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "analyze",
        "bands": a.bands.as_str(),
        "k": a.k,
        "side": d,
        "masks_a": set_a.len(),
        "masks_b": set_b.as_ref().map_or(0, |s| s.len()),
    });
    let obj = summary.as_object_mut().expect("object");

    if let Some(b) = &set_b {
        let ab = exceed_fraction(&set_a, b, &bands)?;
        let ba = exceed_fraction(b, &set_a, &bands)?;
        let diffs: Vec<Vec<f64>> =
            set_a.entries().iter().map(|e| mask_diff_centered(&e.mask, &by_id_b[&e.id].mask)).collect::<Result<_>>()?;
        let mean_diff = mean_grid(diffs.iter().map(|v| v.as_slice()), dd);
        let range = ColorRange::fit([mean_diff.as_slice()], Colormap::Diverging);
        render_png(&mean_diff, d, Colormap::Diverging, range, &run.manifest.output("diff.png"))?;
        write_csv(
            &run.manifest.output("exceed.csv"),
            &["band", "lo", "hi", "a_exceeds_b", "b_exceeds_a"],
            (0..bands.bands()).map(|k| {
                let (lo, hi) = bands.range(k);
                [k.to_string(), lo.to_string(), hi.to_string(), ab[k].to_string(), ba[k].to_string()]
            }),
        )?;
        let h = 32;
        let (bars, cols) = hstack(&[bar_grid(&ab, h, 1.0), bar_grid(&ba, h, 1.0)], h, ab.len(), 0.5);
        let png = crate::report::encode_png(&bars, h, cols, Colormap::Grayscale, ColorRange { lo: 0.0, hi: 1.0 }, 8)?;
        crate::io::write_atomic(&run.manifest.output("exceed.png"), &png)?;
        obj.insert("exceed_a_over_b".into(), json!(ab));
        obj.insert("exceed_b_over_a".into(), json!(ba));
        obj.insert("max_abs_mean_difference".into(), json!(mean_diff.iter().fold(0.0f64, |m, v| m.max(v.abs()))));
    }

    if set_a.len() >= 5 && distinct_labels(&set_a) >= 2 {
        let cfg = ProbeConfig { seed: a.common.seed, ..Default::default() };
        obj.insert("probe".into(), probe_outputs(&set_a, &cfg, &mut run)?);
    }
    write_json(&run.manifest.output("summary.json"), &summary)?;
    run.finish()
}

/// Probe with true and shuffled labels plus the PCA scatter; returns the
/// metrics for the summary.
fn probe_outputs(set: &MaskSet, cfg: &ProbeConfig, run: &mut Run) -> Result<Value> {
    let (truth, _) = linear_probe(set, false, cfg)?;
    let (shuffled, _) = linear_probe(set, true, cfg)?;
    let mut rows = Vec::new();
    for (name, r) in [("true", &truth), ("shuffled", &shuffled)] {
        rows.push([name.to_string(), "all".to_string(), r.accuracy.to_string()]);
        for (c, acc) in r.per_class.iter().enumerate() {
            rows.push([name.to_string(), c.to_string(), acc.map(|v| v.to_string()).unwrap_or_default()]);
        }
    }
    write_csv(&run.manifest.output("probe.csv"), &["labels", "class", "accuracy"], rows)?;
    let pts = pca_scatter(set, cfg)?;
    write_csv(
        &run.manifest.output("scatter.csv"),
        &["image", "label", "x", "y"],
        set.entries()
            .iter()
            .zip(&pts)
            .map(|(e, p)| [e.id.to_string(), p.label.to_string(), p.x.to_string(), p.y.to_string()]),
    )?;
    Ok(json!({ "true_labels": probe_json(&truth), "shuffled_labels": probe_json(&shuffled) }))
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Directory of single-image masks.
    #[arg(long)]
    pub masks: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 3000)]
    pub max_iter: usize,
}

pub(super) fn probe(a: ProbeArgs, mut run: Run) -> std::result::Result<(), CliError> {
    let set = load_set(&a.masks, &mut run)?;
    let cfg = ProbeConfig {
        seed: a.common.seed,
        l2: a.l2,
        test_fraction: a.test_fraction,
        max_iter: a.max_iter,
        ..Default::default()
    };
    let metrics = probe_outputs(&set, &cfg, &mut run)?;
    println!(
        "probe accuracy {} (shuffled labels {})",
        metrics["true_labels"]["accuracy"], metrics["shuffled_labels"]["accuracy"]
    );
    write_json(
        &run.manifest.output("summary.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "command": "probe",
            "masks": set.len(),
            "classes": distinct_labels(&set),
            "probe": metrics,
        }),
    )?;
    run.finish()
}
