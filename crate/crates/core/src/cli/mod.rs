//! The `fmask` command line: argument parsing, config files, output
//! directories and exit codes. Each subcommand lives in its own module.

mod analyze;
mod demo;
mod pipeline;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::data::augment::{AugmentKind, AugmentPolicy, PgdParams};
use crate::data::idx::load_idx;
use crate::data::synthetic::generate_synthetic;
use crate::data::DatasetSplit;
use crate::error::Error;
use crate::io::{format_kv, parse_kv, write_atomic};
use crate::report::Manifest;

pub use analyze::load_mask_set;
pub use demo::DemoKind;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "FMASK_OUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fmask", version, about = "Learned Fourier-domain masks for frozen classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a classifier and write its checkpoint.
    Train(pipeline::TrainArgs),
    /// Evaluate a checkpoint under PGD.
    Attack(pipeline::AttackArgs),
    /// Learn a global mask or one mask per correctly classified image.
    LearnMask(pipeline::LearnMaskArgs),
    /// Compare mask sets: energies, differences, exceed fractions, probe.
    Analyze(analyze::AnalyzeArgs),
    /// Run one of the spectral demonstrations.
    Demo(demo::DemoArgs),
    /// Linear probe and PCA scatter on single-image masks.
    Probe(analyze::ProbeArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// key=value settings; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory. Defaults to $FMASK_OUT/<command>, else ./fmask-out/<command>.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Use the built-in synthetic grating dataset.
    #[arg(long)]
    pub synthetic: bool,
    /// IDX image file.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// IDX label file.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// IDX classes to keep, remapped to 0..n in this order.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub classes: Vec<u8>,
    /// Most images kept per IDX class.
    #[arg(long, default_value_t = 1000)]
    pub cap: usize,
    /// Synthetic class count.
    #[arg(long, default_value_t = 5)]
    pub n_classes: usize,
    /// Synthetic images per class.
    #[arg(long, default_value_t = 200)]
    pub per_class: usize,
    /// Seed for data generation and the train/val split.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
}

impl DataArgs {
    fn load(&self, manifest: &mut Manifest) -> Result<DatasetSplit, CliError> {
        match (self.synthetic, &self.images, &self.labels) {
            (true, None, None) => Ok(generate_synthetic(self.n_classes, self.per_class, self.data_seed)?),
            (false, Some(i), Some(l)) => {
                manifest.input(i);
                manifest.input(l);
                Ok(load_idx(i, l, &self.classes, self.cap, self.data_seed)?)
            }
            _ => Err(CliError::Usage("choose a data source: --synthetic, or both --images and --labels".into())),
        }
    }
}

#[derive(Debug, Args)]
pub struct PgdArgs {
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    #[arg(long, default_value_t = 0.02)]
    pub alpha: f64,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
}

impl PgdArgs {
    fn params(&self) -> PgdParams {
        PgdParams { eps: self.eps, alpha: self.alpha, steps: self.steps }
    }
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long, default_value = "none", value_parser = parse_from_str::<AugmentKind>)]
    pub augment: AugmentKind,
    #[command(flatten)]
    pub pgd: PgdArgs,
    #[arg(long, default_value_t = 4)]
    pub max_shift: usize,
    /// Degrees.
    #[arg(long, default_value_t = 30.0)]
    pub max_angle: f64,
    #[arg(long, default_value_t = 0.8)]
    pub scale_min: f64,
    #[arg(long, default_value_t = 1.2)]
    pub scale_max: f64,
}

impl AugmentArgs {
    fn policy(&self) -> AugmentPolicy {
        AugmentPolicy {
            kind: self.augment,
            max_shift: self.max_shift,
            max_angle: self.max_angle,
            scale_range: (self.scale_min, self.scale_max),
            pgd: self.pgd.params(),
        }
    }
}

pub(crate) fn parse_from_str<T>(s: &str) -> Result<T, String>
where
    T: std::str::FromStr<Err = Error>,
{
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    /// A demo or report check did not hold.
    Check(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Check(m) => write!(f, "check failed: {m}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Check(_) | CliError::Lib(_) => EXIT_FAILURE,
        }
    }
}

/// State shared by every subcommand run.
pub(crate) struct Run {
    pub manifest: Manifest,
    pub resolved: BTreeMap<String, String>,
}

impl Run {
    fn new(name: &str, common: &CommonArgs, resolved: BTreeMap<String, String>) -> Result<Self, CliError> {
        let root = match &common.out {
            Some(p) => p.clone(),
            None => {
                std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("fmask-out")).join(name)
            }
        };
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let mut manifest = Manifest::new(&root, name, common.seed);
        if let Some(c) = &common.config {
            manifest.input(c);
        }
        Ok(Run { manifest, resolved })
    }

    pub fn root(&self) -> &Path {
        self.manifest.root()
    }

    /// Writes the resolved configuration snapshot and the manifest.
    pub fn finish(mut self) -> Result<(), CliError> {
        let snap = self.manifest.output("config.txt");
        write_atomic(&snap, format_kv(&self.resolved).as_bytes())?;
        let m = self.manifest.write()?;
        log::info!("wrote {}", m.display());
        Ok(())
    }
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Train(_) => "train",
        Command::Attack(_) => "attack",
        Command::LearnMask(_) => "learn-mask",
        Command::Analyze(_) => "analyze",
        Command::Demo(_) => "demo",
        Command::Probe(_) => "probe",
    }
}

/// Parses `argv`, folding in `--config` entries that the command line did
/// not set. Returns the typed arguments and the resolved `key=value` view.
pub fn parse_args(argv: Vec<OsString>) -> Result<(Cli, BTreeMap<String, String>), clap::Error> {
    let cmd = Cli::command();
    let first = cmd.clone().try_get_matches_from(&argv)?;
    let (sub_name, sub_matches) = first.subcommand().expect("subcommand is required");
    let sub_cmd = cmd.find_subcommand(sub_name).expect("matched subcommand exists").clone();

    let mut argv = argv;
    if let Some(path) = sub_matches.get_one::<PathBuf>("config") {
        let text = std::fs::read_to_string(path).map_err(|e| {
            clap::Error::raw(clap::error::ErrorKind::Io, format!("cannot read {}: {e}\n", path.display()))
        })?;
        let kv = parse_kv(&text, 0).map_err(|e| {
            clap::Error::raw(clap::error::ErrorKind::InvalidValue, format!("{}: {e}\n", path.display()))
        })?;
        for (key, value) in kv {
            let arg = sub_cmd
                .get_arguments()
                .find(|a| a.get_long() == Some(key.as_str()) && key != "config")
                .ok_or_else(|| {
                    clap::Error::raw(
                        clap::error::ErrorKind::UnknownArgument,
                        format!("unknown key {key:?} in {}\n", path.display()),
                    )
                })?;
            if sub_matches.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine) {
                continue;
            }
            match arg.get_action() {
                ArgAction::SetTrue => match value.as_str() {
                    "true" => argv.push(format!("--{key}").into()),
                    "false" => {}
                    other => {
                        return Err(clap::Error::raw(
                            clap::error::ErrorKind::InvalidValue,
                            format!("key {key:?} expects true or false, got {other:?}\n"),
                        ))
                    }
                },
                _ => argv.push(format!("--{key}={value}").into()),
            }
        }
    }
    let matches = cmd.clone().try_get_matches_from(&argv)?;
    let cli = Cli::from_arg_matches(&matches)?;
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    Ok((cli, resolved_config(&sub_cmd, sub)))
}

fn resolved_config(cmd: &clap::Command, m: &ArgMatches) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for arg in cmd.get_arguments() {
        let id = arg.get_id().as_str();
        if matches!(id, "help" | "version" | "config" | "out") {
            continue;
        }
        let key = arg.get_long().unwrap_or(id).to_string();
        match arg.get_action() {
            ArgAction::SetTrue => {
                out.insert(key, m.get_flag(id).to_string());
            }
            _ => {
                if let Ok(Some(raw)) = m.try_get_raw(id) {
                    let vals: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
                    out.insert(key, vals.join(","));
                }
            }
        }
    }
    out
}

/// Runs the CLI and returns the process exit code.
pub fn main_with(argv: Vec<OsString>) -> i32 {
    let (cli, resolved) = match parse_args(argv) {
        Ok(v) => v,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli, resolved) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("fmask: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, resolved: BTreeMap<String, String>) -> Result<(), CliError> {
    let name = subcommand_name(&cli.command);
    match cli.command {
        Command::Train(a) => {
            let run = Run::new(name, &a.common, resolved)?;
            pipeline::train(a, run)
        }
        Command::Attack(a) => {
            let run = Run::new(name, &a.common, resolved)?;
            pipeline::attack(a, run)
        }
        Command::LearnMask(a) => {
            let run = Run::new(name, &a.common, resolved)?;
            pipeline::learn_mask(a, run)
        }
        Command::Analyze(a) => {
            let run = Run::new(name, &a.common, resolved)?;
            analyze::analyze(a, run)
        }
        Command::Demo(a) => {
            let run = Run::new(name, &a.common, resolved)?;
            demo::demo(a, run)
        }
        Command::Probe(a) => {
            let run = Run::new(name, &a.common, resolved)?;
            analyze::probe(a, run)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<OsString> {
        std::iter::once("fmask").chain(s.split_whitespace()).map(OsString::from).collect()
    }

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn config_fills_unset_flags_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "# comment\nepochs=3\nsynthetic=true\nmax-lr=0.5\n").unwrap();
        let (cli, resolved) = parse_args(argv(&format!("train --config {} --max-lr 0.01", cfg.display()))).unwrap();
        let Command::Train(t) = cli.command else { panic!() };
        assert_eq!(t.epochs, 3);
        assert!(t.data.synthetic);
        assert_eq!(t.max_lr, 0.01);
        assert_eq!(resolved["epochs"], "3");
        assert_eq!(resolved["max-lr"], "0.01");
        assert_eq!(resolved["synthetic"], "true");
        assert!(!resolved.contains_key("config"));
    }

    #[test]
    fn unknown_config_key_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "epochz=3\n").unwrap();
        let err = parse_args(argv(&format!("train --config {}", cfg.display()))).unwrap_err();
        assert!(err.use_stderr());
        assert!(err.to_string().contains("epochz"));
    }

    #[test]
    fn bad_flags_are_usage_errors() {
        assert!(parse_args(argv("train --epochs many")).is_err());
        assert!(parse_args(argv("nosuch")).is_err());
        assert!(parse_args(argv("train --augment sideways")).is_err());
    }
}
