use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use embench_core::augment::{AugmentConfig, Family};
use embench_core::runner::{self, Outcome, TaskKind};
use embench_core::stats::Metric;
use embench_core::synth::{self, TileTaskSpec};
use embench_core::{Error, LabelKind, Result, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "embench", version, about = "Deterministic benchmarking of frozen tile embeddings")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (bootstrap tables, shuffles, augmentation).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Output directory.
    #[arg(long, global = true, env = "EMBENCH_OUT", default_value = "embench-out")]
    out_dir: PathBuf,
    /// Print the effective configuration with all defaults and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Use seeds 0..N for the repeated cross-validation.
    #[arg(long, global = true)]
    seeds: Option<usize>,
    /// Number of outer folds.
    #[arg(long, global = true)]
    folds: Option<usize>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tile-level linear, kNN or ridge probing.
    Probe,
    /// Slide-level ABMIL with nested hyperparameter selection.
    Mil,
    /// Background, dark-area and pen-mark filtering of a tile directory.
    Qc {
        #[arg(long)]
        input: PathBuf,
    },
    /// Augmented copies of a tile directory for copy detection.
    Augment {
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated subset of geo,color,noise,deform.
        #[arg(long, value_delimiter = ',')]
        families: Option<Vec<Family>>,
        /// Sample every parameter at zero magnitude (identity output).
        #[arg(long)]
        zero_magnitude: bool,
    },
    /// Top-k retrieval of originals from augmented embeddings.
    Copydetect,
    /// Bootstrap and significance tests over existing predictions.csv files.
    Compare {
        #[arg(long = "ledger", required = true)]
        ledgers: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "class")]
        kind: KindArg,
        /// Defaults to mcc for class ledgers and pearson for real ones.
        #[arg(long, value_enum)]
        metric: Option<MetricArg>,
    },
    /// Plot-ready violin.csv and pvalue_heatmap.json from a run directory.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Write a synthetic fixture into the output directory.
    Synth {
        #[arg(value_enum)]
        what: SynthKind,
        #[arg(long, default_value_t = 2000)]
        tiles: usize,
        #[arg(long, default_value_t = 50)]
        groups: usize,
        #[arg(long, default_value_t = 40)]
        bags: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        /// Per-coordinate shift of the indicator instance in positive bags.
        #[arg(long, default_value_t = 6.0)]
        shift: f64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Class,
    Real,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MetricArg {
    Mcc,
    Accuracy,
    Pearson,
    R2,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SynthKind {
    Tile,
    Mil,
    Copy,
    Tiles,
}

fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = cli.seeds {
        cfg.set_seed_count(n);
    }
    if let Some(k) = cli.folds {
        cfg.folds.outer_k = k;
    }
    Ok(cfg)
}

fn report_outcome(out: &Outcome, dir: &Path) {
    println!("wrote {} artifacts to {}", out.artifacts.len() + 1, dir.display());
    println!("config hash {}", out.config_hash);
    if !out.skips.is_empty() {
        eprintln!("warning: {} skipped folds or configurations, see skips.csv", out.skips.len());
    }
}

fn require_task(cfg: &RunConfig, ok: impl Fn(TaskKind) -> bool, cmd: &str) -> Result<()> {
    if ok(cfg.task.kind) {
        Ok(())
    } else {
        Err(Error::Config(format!("`{cmd}` cannot run task `{}`", cfg.task.kind)))
    }
}

fn execute(cli: &Cli) -> Result<i32> {
    let cfg = effective_config(cli)?;
    if cli.print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(0);
    }
    let Some(command) = &cli.command else {
        return Err(Error::Argument("no subcommand given (see --help)".into()));
    };
    let out = &cli.out_dir;
    match command {
        Command::Probe | Command::Mil | Command::Copydetect => {
            match command {
                Command::Probe => require_task(&cfg, |k| !k.is_slide() && k != TaskKind::CopyDetect, "probe")?,
                Command::Mil => {
                    require_task(&cfg, TaskKind::is_slide, "mil")?;
                    println!("grid: {} configurations", cfg.abmil.configs().len());
                }
                _ => require_task(&cfg, |k| k == TaskKind::CopyDetect, "copydetect")?,
            }
            let outcome = runner::run(&cfg, out)?;
            report_outcome(&outcome, out);
            Ok(outcome.exit_code())
        }
        Command::Qc { input } => {
            let (kept, total) = runner::qc_dir(input, &cfg.qc, out)?;
            println!("kept {kept} of {total} tiles; report in {}", out.join("qc.csv").display());
            Ok(0)
        }
        Command::Augment { input, families, zero_magnitude } => {
            let families = families.clone().unwrap_or_else(|| cfg.augment.families.clone());
            let ranges = if *zero_magnitude { AugmentConfig::zero_magnitude() } else { cfg.augment.ranges };
            let n = runner::augment_dir(input, &families, &ranges, cfg.seed, out)?;
            println!("wrote {n} augmented tiles to {}", out.display());
            Ok(0)
        }
        Command::Compare { ledgers, kind, metric } => {
            let kind = match kind {
                KindArg::Class => LabelKind::Class,
                KindArg::Real => LabelKind::Real,
            };
            let metric = match (metric, kind) {
                (Some(MetricArg::Mcc), _) | (None, LabelKind::Class) => Metric::Mcc,
                (Some(MetricArg::Accuracy), _) => Metric::Accuracy,
                (Some(MetricArg::Pearson), _) | (None, LabelKind::Real) => Metric::Pearson,
                (Some(MetricArg::R2), _) => Metric::R2,
            };
            let outcome = runner::compare_ledgers(ledgers, kind, &cfg, metric, out)?;
            report_outcome(&outcome, out);
            Ok(0)
        }
        Command::Report { run_dir } => {
            for p in runner::report(run_dir, out)? {
                println!("wrote {}", p.display());
            }
            Ok(0)
        }
        Command::Synth { what, tiles, groups, bags, dim, shift } => {
            let seed = cfg.seed;
            match what {
                SynthKind::Tile => {
                    let spec = TileTaskSpec { n_tiles: *tiles, n_groups: *groups, dim: *dim, ..Default::default() };
                    println!("{}", synth::write_tile_fixture(out, &spec, seed)?.display());
                }
                SynthKind::Mil => println!("{}", synth::write_mil_fixture(out, *bags, *dim, *shift, seed)?.display()),
                SynthKind::Copy => println!("{}", synth::write_copy_fixture(out, *tiles, *dim, seed)?.display()),
                SynthKind::Tiles => {
                    synth::write_tile_images(out, *tiles, 64, seed)?;
                    println!("{}", out.display());
                }
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
            eprintln!("error: cannot start {} workers: {e}", cli.jobs);
            return ExitCode::from(1);
        }
    }
    match execute(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
