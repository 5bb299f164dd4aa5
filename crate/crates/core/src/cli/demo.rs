//! `demo`: spectral demonstrations with their checks. Any failed check
//! makes the command exit with status 1 after all outputs are written.

use clap::{Args, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{CliError, CommonArgs, Run};
use crate::demos::{
    box_transform_simpson, intermodulation_check, intermodulation_expected, nonlinearity_spectrum,
    self_convolution_check, sinc_factor, Nonlinearity, DEFAULT_LEN,
};
use crate::io::write_atomic;
use crate::report::{bar_grid, encode_png, hstack, write_csv, write_json, ColorRange, Colormap, SCHEMA_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DemoKind {
    BlueShift,
    Intermodulation,
    Sinc,
    Selfconv,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(value_enum)]
    pub kind: DemoKind,
    /// Signal length (power of two).
    #[arg(long, default_value_t = DEFAULT_LEN)]
    pub n: usize,
    /// Nonlinearity checked by blue-shift, or "all".
    #[arg(long, default_value = "all")]
    pub nl: String,
    /// Tone frequency for blue-shift, in cycles per signal.
    #[arg(long, default_value_t = 8)]
    pub freq: usize,
    /// Tone amplitude; above 1 so that hardtanh clips.
    #[arg(long, default_value_t = 2.0)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 5)]
    pub w1: usize,
    #[arg(long, default_value_t = 3)]
    pub w2: usize,
    /// Half-width of the translation range for sinc.
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    /// Frequencies where sinc compares the closed form with quadrature.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.4,0.7,1.3,1.9")]
    pub gammas: Vec<f64>,
    /// Simpson sub-intervals for sinc.
    #[arg(long, default_value_t = 10_000)]
    pub intervals: usize,
    /// Orders checked by selfconv.
    #[arg(long, value_delimiter = ',', default_value = "2,3")]
    pub orders: Vec<u32>,
}

struct Check {
    name: String,
    value: f64,
    limit: f64,
    pass: bool,
}

impl Check {
    fn below(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Check { name: name.into(), value, limit, pass: value < limit }
    }

    fn above(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Check { name: name.into(), value, limit, pass: value > limit }
    }
}

/// One bar panel per spectrum, each scaled to its own peak.
fn panels_png(spectra: &[Vec<f64>]) -> crate::Result<Vec<u8>> {
    let h = 64;
    let grids: Vec<Vec<f64>> =
        spectra.iter().map(|s| bar_grid(s, h, s.iter().fold(0.0, |m: f64, v| m.max(v.abs())))).collect();
    let cols = spectra.first().map_or(0, |s| s.len());
    let (img, total) = hstack(&grids, h, cols, 0.5);
    encode_png(&img, h, total, Colormap::Grayscale, ColorRange { lo: 0.0, hi: 1.0 }, 2)
}

fn blue_shift(a: &DemoArgs, run: &mut Run, checks: &mut Vec<Check>) -> Result<(), CliError> {
    let selected: Vec<Nonlinearity> = if a.nl == "all" {
        Nonlinearity::ALL[1..].to_vec()
    } else {
        vec![super::parse_from_str(&a.nl).map_err(CliError::Usage)?]
    };
    let spectra: Vec<Vec<f64>> = Nonlinearity::ALL
        .iter()
        .map(|&nl| nonlinearity_spectrum(a.freq, nl, a.n, a.amplitude))
        .collect::<crate::Result<_>>()?;
    let mut header = vec!["bin".to_string()];
    header.extend(Nonlinearity::ALL.iter().map(|n| n.to_string()));
    let header: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    write_csv(
        &run.manifest.output("spectra.csv"),
        &header,
        (0..spectra[0].len()).map(|b| {
            std::iter::once(b.to_string()).chain(spectra.iter().map(|s| s[b].to_string())).collect::<Vec<_>>()
        }),
    )?;
    write_atomic(&run.manifest.output("panels.png"), &panels_png(&spectra)?)?;

    let outside = |s: &[f64]| {
        let total: f64 = s.iter().map(|v| v * v).sum();
        (total - s[a.freq] * s[a.freq]).max(0.0)
    };
    let identity = &spectra[0];
    checks.push(Check::below(
        "identity energy outside the tone",
        outside(identity) / (identity[a.freq] * identity[a.freq]),
        1e-18,
    ));
    for (nl, s) in Nonlinearity::ALL.iter().zip(&spectra) {
        if !selected.contains(nl) {
            continue;
        }
        let total: f64 = s.iter().map(|v| v * v).sum();
        checks.push(Check::below(format!("{nl} total energy finite"), if total.is_finite() { 0.0 } else { 1.0 }, 0.5));
        checks.push(Check::above(format!("{nl} energy outside the tone"), outside(s), 0.0));
    }
    Ok(())
}

fn intermodulation(a: &DemoArgs, run: &mut Run, checks: &mut Vec<Check>) -> Result<(), CliError> {
    let r = intermodulation_check(a.w1, a.w2, a.n)?;
    let expected = intermodulation_expected(a.n);
    write_csv(
        &run.manifest.output("peaks.csv"),
        &["bin", "magnitude", "expected"],
        r.peaks.iter().zip(expected).map(|(&(b, m), e)| [b.to_string(), m.to_string(), e.to_string()]),
    )?;
    write_csv(
        &run.manifest.output("spectrum.csv"),
        &["bin", "magnitude"],
        r.spectrum.iter().enumerate().map(|(b, m)| [b.to_string(), m.to_string()]),
    )?;
    write_atomic(&run.manifest.output("panels.png"), &panels_png(std::slice::from_ref(&r.spectrum))?)?;
    for (&(b, m), e) in r.peaks.iter().zip(expected) {
        checks.push(Check::below(format!("bin {b} magnitude error"), (m - e).abs(), 1e-9));
    }
    checks.push(Check::below("largest off-support magnitude", r.off_support_max, 1e-9));
    Ok(())
}

fn sinc(a: &DemoArgs, run: &mut Run, checks: &mut Vec<Check>) -> Result<(), CliError> {
    if !(a.a > 0.0) {
        return Err(CliError::Usage("--a must be positive".into()));
    }
    let grid: Vec<f64> = (0..=200).map(|i| i as f64 * 0.02).collect();
    let factors: Vec<f64> = grid.iter().map(|&g| sinc_factor(g, a.a)).collect();
    write_csv(
        &run.manifest.output("factor.csv"),
        &["gamma", "factor"],
        grid.iter().zip(&factors).map(|(g, f)| [g.to_string(), f.to_string()]),
    )?;
    let mut rows = Vec::new();
    for &g in &a.gammas {
        let analytic = sinc_factor(g, a.a);
        let numeric = box_transform_simpson(g, a.a, a.intervals);
        let err = (numeric - analytic).norm();
        rows.push([g.to_string(), analytic.to_string(), numeric.re.to_string(), err.to_string()]);
        checks.push(Check::below(format!("quadrature error at gamma {g}"), err, 1e-8));
    }
    write_csv(&run.manifest.output("quadrature.csv"), &["gamma", "analytic", "simpson", "abs_error"], rows)?;
    let mags: Vec<f64> = factors.iter().map(|f| f.abs()).collect();
    write_atomic(&run.manifest.output("panels.png"), &panels_png(std::slice::from_ref(&mags))?)?;
    checks.push(Check::below("factor at gamma 0 minus 2a", (sinc_factor(0.0, a.a) - 2.0 * a.a).abs(), 1e-15));
    let peak_elsewhere = mags[1..].iter().fold(0.0, |m: f64, v| m.max(*v));
    checks.push(Check::below("largest factor away from 0 over factor at 0", peak_elsewhere / mags[0], 1.0));
    Ok(())
}

fn selfconv(a: &DemoArgs, run: &mut Run, checks: &mut Vec<Check>) -> Result<(), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.common.seed);
    let x: Vec<f64> = (0..a.n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut delta = vec![0.0; a.n];
    delta[0] = 1.0;
    let mut rows = Vec::new();
    for &k in &a.orders {
        let err = self_convolution_check(&x, k)?;
        let derr = self_convolution_check(&delta, k)?;
        rows.push(["random".to_string(), k.to_string(), err.to_string()]);
        rows.push(["delta".to_string(), k.to_string(), derr.to_string()]);
        checks.push(Check::below(format!("order {k} random signal error"), err, 1e-8));
        checks.push(Check::below(format!("order {k} delta error"), derr, 1e-12));
    }
    write_csv(&run.manifest.output("errors.csv"), &["signal", "order", "max_error"], rows)?;
    let spectra: Vec<Vec<f64>> = a
        .orders
        .iter()
        .map(|&k| {
            let p: Vec<f64> = x.iter().map(|v| v.powi(k as i32)).collect();
            crate::spectral::fft_real(&p).map(|s| s[..=a.n / 2].iter().map(|z| z.norm()).collect())
        })
        .collect::<crate::Result<_>>()?;
    write_atomic(&run.manifest.output("panels.png"), &panels_png(&spectra)?)?;
    Ok(())
}

pub(super) fn demo(a: DemoArgs, mut run: Run) -> Result<(), CliError> {
    let mut checks = Vec::new();
    match a.kind {
        DemoKind::BlueShift => blue_shift(&a, &mut run, &mut checks)?,
        DemoKind::Intermodulation => intermodulation(&a, &mut run, &mut checks)?,
        DemoKind::Sinc => sinc(&a, &mut run, &mut checks)?,
        DemoKind::Selfconv => selfconv(&a, &mut run, &mut checks)?,
    }
    write_csv(
        &run.manifest.output("checks.csv"),
        &["check", "value", "limit", "pass"],
        checks.iter().map(|c| [c.name.clone(), c.value.to_string(), c.limit.to_string(), c.pass.to_string()]),
    )?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    write_json(
        &run.manifest.output("summary.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "command": "demo",
            "demo": a.kind.to_possible_value().map(|v| v.get_name().to_string()),
            "checks": checks.len(),
            "failed": failed,
        }),
    )?;
    let failed = failed.join("; ");
    run.finish()?;
    if failed.is_empty() {
        println!("all {} checks passed", checks.len());
        Ok(())
    } else {
        Err(CliError::Check(failed))
    }
}
