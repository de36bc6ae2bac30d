//! `atlasd`: generate data, run discovery stages, export heatmaps and verify manifests.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime or numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use atlasd::io::{self, RunConfig, TaskSpec};
use atlasd::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "atlasd", version, about = "Local symmetry discovery over chart atlases")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Seed for data, predictors and every stage; overrides the file.
    #[arg(long)]
    seed: u64,
    /// Override a config key, e.g. `--set discovery.k=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        overrides.push(format!("seed={}", self.seed));
        io::load_run_config(&self.config, &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset (header + blob) with a built-in task.
    GenData {
        /// heat, l1, arctan or quadratic.
        task: String,
        /// Task parameters (TOML table, keys as in a run config's [task]).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Header path; the blob goes beside it with extension `.bin`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Fit one predictor per chart.
    TrainPredictors(RunArgs),
    /// Learn generators with saved predictors.
    DiscoverGen(RunArgs),
    /// Learn, rank and filter coset representatives; writes the manifest.
    DiscoverCosets(RunArgs),
    /// Choose the number of generators from repeated runs.
    SelectK(RunArgs),
    /// Run every stage and write the manifest.
    Pipeline(RunArgs),
    /// Write PGM heatmaps of generators, cosets and the metric.
    ExportHeatmaps {
        manifest: PathBuf,
        /// Defaults to the manifest's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute determinants, coset distances and metric residuals.
    Verify { manifest: PathBuf },
}

fn gen_data(task: &str, config: Option<&Path>, out: &Path, seed: u64, overrides: &[String]) -> Result<()> {
    let mut table = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        io::apply_override(&mut table, o)?;
    }
    table.insert("kind".into(), task.into());
    let spec: TaskSpec = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    if matches!(spec, TaskSpec::Dataset { .. }) {
        return Err(Error::Config("gen-data needs a generator task: heat, l1, arctan or quadratic".into()));
    }
    let ds = io::generate_task(&spec, seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    io::save_dataset(&ds, out)?;
    println!("wrote {} samples to {}", ds.data.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            task,
            config,
            out,
            seed,
            overrides,
        } => gen_data(&task, config.as_deref(), &out, seed, &overrides)?,
        Command::TrainPredictors(a) => {
            let f = io::run_train(&a.load()?)?;
            for (c, l) in f.losses.iter().enumerate() {
                println!("chart {c}: loss {l:.4e}");
            }
        }
        Command::DiscoverGen(a) => {
            let f = io::run_generators(&a.load()?)?;
            for (i, b) in f.basis.matrices.iter().enumerate() {
                println!("generator {i}: {:?}", b.data());
            }
        }
        Command::DiscoverCosets(a) => {
            let m = io::run_cosets(&a.load()?)?;
            print_cosets(&m);
        }
        Command::SelectK(a) => {
            let r = io::run_select(&a.load()?)?;
            for row in &r.rows {
                println!("k = {}: agreement {:.2} deg, weakest ratio {:?}", row.k, row.consistency_deg, row.weakest_ratio);
            }
            println!("{}", r.note);
            if let Some(k) = r.recommended {
                println!("recommended k = {k}");
            }
        }
        Command::Pipeline(a) => {
            let cfg = a.load()?;
            io::run_pipeline(&cfg)?;
            let m = io::load_manifest(&cfg.output.join(io::MANIFEST_FILE))?;
            print_cosets(&m);
            println!("manifest: {}", cfg.output.join(io::MANIFEST_FILE).display());
        }
        Command::ExportHeatmaps { manifest, out } => {
            let m = io::load_manifest(&manifest)?;
            let dir = out.unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default());
            for p in io::export_manifest_heatmaps(&m, &dir)? {
                println!("{}", p.display());
            }
        }
        Command::Verify { manifest } => {
            let m = io::load_manifest(&manifest)?;
            let r = io::verify_manifest(&m)?;
            println!("max | |det| - 1 |: {:e}", r.max_det_error);
            if let Some(d) = r.min_pair_distance {
                println!("min pairwise coset distance: {d:.4}");
            }
            if let Some((stored, recomputed)) = r.metric_residual {
                println!("metric residual: stored {stored:e}, recomputed {recomputed:e}");
            }
            if !r.passed() {
                return Err(Error::Numerical(r.failures.join("; ")));
            }
            println!("ok");
        }
    }
    Ok(())
}

fn print_cosets(m: &io::ResultsManifest) {
    if let Some(b) = &m.generators {
        for (i, g) in b.matrices.iter().enumerate() {
            println!("generator {i}: {:?}", g.data());
        }
    }
    for c in &m.cosets {
        println!("coset {}: det {:.4} loss {:.4e} {:?}", c.index, c.det, c.loss, c.matrix.data());
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
