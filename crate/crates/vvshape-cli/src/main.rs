//! Command line front end: `train`, `sweep`, `export`, and `check`
//! subcommands over the library, with a TOML config file and flag
//! overrides (flag beats file beats default).

use std::error::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use vvshape::checks::{run_checks, Faults};
use vvshape::cpe::{qam_ring_radii, Activation, VvParams};
use vvshape::sweep::{export_results, write_manifest, run_sweep, SweepGrid, SweepSystem};
use vvshape::trainer::{train_with_checkpoints, TrainConfig, TrainedSystem};

/// Everything a run needs, parsed from one file. Both sections have full
/// defaults, so an empty file (or none at all) is a valid configuration.
#[derive(Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    train: TrainConfig,
    sweep: SweepGrid,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Box<dyn Error>> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| format!("cannot read config {}: {e}", p.display()))?;
            Ok(toml::from_str(&text).map_err(|e| format!("config {}: {e}", p.display()))?)
        }
    }
}

#[derive(Parser)]
#[command(name = "vvshape", version, about = "Constellation shaping for phase noise channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a constellation and demapper; writes a run directory.
    Train(TrainArgs),
    /// Evaluate systems on an SNR x linewidth grid; writes result files.
    Sweep(SweepArgs),
    /// Re-export one artifact of a trained system as TSV.
    Export(ExportArgs),
    /// Run the fast invariant suite.
    Check(CheckArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML config file with [train] and [sweep] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory for artifacts.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Bits per symbol of the trained constellation.
    #[arg(long)]
    bits_per_symbol: Option<u32>,
    /// Symmetry order of the phase estimator.
    #[arg(long)]
    mu: Option<u32>,
    /// Number of trainable selection rings (0 = classic estimator).
    #[arg(long)]
    partitions: Option<usize>,
    /// Ring weight activation: sigmoid or softplus.
    #[arg(long)]
    activation: Option<String>,
    /// Averaging half width of the phase estimator.
    #[arg(long)]
    half_window: Option<usize>,
    /// Radius of the post-estimate moving average (ring systems only).
    #[arg(long)]
    smooth_radius: Option<usize>,
    /// Hidden layer widths of the demapper, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    batch_len: Option<usize>,
    #[arg(long)]
    batches: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long)]
    linewidth_hz: Option<f64>,
    #[arg(long)]
    symbol_rate_baud: Option<f64>,
    /// Write checkpoints every this many batches (0 = never).
    #[arg(long)]
    checkpoint_interval: Option<usize>,
}

impl TrainArgs {
    fn apply(&self, cfg: &mut TrainConfig) -> Result<(), Box<dyn Error>> {
        macro_rules! set {
            ($field:ident, $arg:expr) => {
                if let Some(v) = $arg {
                    cfg.$field = v;
                }
            };
        }
        set!(seed, self.seed);
        set!(bits_per_symbol, self.bits_per_symbol);
        set!(power, self.mu);
        set!(rings, self.partitions);
        set!(half_window, self.half_window);
        set!(batch_len, self.batch_len);
        set!(batches, self.batches);
        set!(learning_rate, self.lr);
        set!(snr_db, self.snr_db);
        set!(linewidth_hz, self.linewidth_hz);
        set!(symbol_rate_baud, self.symbol_rate_baud);
        set!(checkpoint_interval, self.checkpoint_interval);
        if let Some(r) = self.smooth_radius {
            cfg.smooth_radius = Some(r);
        }
        if let Some(h) = &self.hidden {
            cfg.hidden = h.clone();
        }
        if let Some(a) = &self.activation {
            cfg.activation = Activation::from_str(a)?;
        }
        Ok(())
    }
}

fn cmd_train(args: &TrainArgs) -> Result<(), Box<dyn Error>> {
    let mut cfg = load_config(args.config.as_deref())?.train;
    args.apply(&mut cfg)?;
    let report = train_with_checkpoints(&cfg, Some(&args.out))?;
    report.save_run_dir(&args.out)?;
    println!(
        "trained {} batches into {} (final loss {})",
        report.losses.len(),
        args.out.display(),
        report.losses.last().map_or("n/a".into(), |l| format!("{l:.4}")),
    );
    Ok(())
}

#[derive(Args)]
struct SweepArgs {
    /// TOML config file with [train] and [sweep] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for result files and the manifest.
    #[arg(long, default_value = "sweep")]
    out: PathBuf,
    /// Trained system directory; repeat for several systems.
    #[arg(long = "system")]
    systems: Vec<PathBuf>,
    /// Reference system to include, e.g. qam64-hard2.
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// SNR grid in dB, comma separated.
    #[arg(long = "snrs", value_delimiter = ',')]
    snrs_db: Option<Vec<f64>>,
    /// Linewidth grid in Hz, comma separated.
    #[arg(long = "linewidths", value_delimiter = ',')]
    linewidths_hz: Option<Vec<f64>>,
    /// Validation repetitions per grid cell.
    #[arg(long)]
    reps: Option<usize>,
    /// Symbols per repetition.
    #[arg(long = "symbols")]
    symbols_per_rep: Option<usize>,
    #[arg(long)]
    symbol_rate_baud: Option<f64>,
    /// Symmetry order of the baseline estimator.
    #[arg(long, default_value_t = 4)]
    baseline_mu: u32,
    /// Averaging half width of the baseline estimator.
    #[arg(long, default_value_t = 32)]
    baseline_half_window: usize,
    /// Worker threads for cell evaluation (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

/// Parses a baseline name of the form `qam<size>-hard<rings>`.
fn parse_baseline(name: &str, vv: VvParams) -> Result<SweepSystem, Box<dyn Error>> {
    let err = || format!("unknown baseline {name:?}; expected e.g. qam64-hard2");
    let rest = name.strip_prefix("qam").ok_or_else(err)?;
    let (size, rings) = rest.split_once("-hard").ok_or_else(err)?;
    let size: usize = size.parse().map_err(|_| err())?;
    let rings_used: usize = rings.parse().map_err(|_| err())?;
    if !size.is_power_of_two() || size < 4 {
        return Err(err().into());
    }
    let bits_per_symbol = size.trailing_zeros();
    if bits_per_symbol % 2 != 0 {
        return Err(format!("baseline {name:?} is not a square constellation").into());
    }
    let available = qam_ring_radii(bits_per_symbol).len();
    if !(1..=available).contains(&rings_used) {
        return Err(format!(
            "baseline {name:?} asks for {rings_used} rings, this constellation has {available}"
        )
        .into());
    }
    Ok(SweepSystem::QamHard {
        bits_per_symbol,
        vv,
        rings_used,
    })
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), Box<dyn Error>> {
    let mut grid = load_config(args.config.as_deref())?.sweep;
    macro_rules! set {
        ($field:ident, $arg:expr) => {
            if let Some(v) = $arg {
                grid.$field = v;
            }
        };
    }
    set!(seed, args.seed);
    set!(snrs_db, args.snrs_db.clone());
    set!(linewidths_hz, args.linewidths_hz.clone());
    set!(reps, args.reps);
    set!(symbols_per_rep, args.symbols_per_rep);
    set!(symbol_rate_baud, args.symbol_rate_baud);
    grid.validate()?;

    // Load every system up front so a bad path fails before any cell runs.
    let mut systems = Vec::new();
    for dir in &args.systems {
        let sys = TrainedSystem::load(dir)
            .map_err(|e| format!("cannot load system {}: {e}", dir.display()))?;
        systems.push(SweepSystem::Trained(sys));
    }
    if let Some(name) = &args.baseline {
        systems.push(parse_baseline(
            name,
            VvParams {
                power: args.baseline_mu,
                half_window: args.baseline_half_window,
            },
        )?);
    }
    if systems.is_empty() {
        return Err("nothing to sweep: pass --system DIR and/or --baseline NAME".into());
    }

    std::fs::create_dir_all(&args.out)?;
    let echo = toml::to_string_pretty(&grid).expect("grid serializes");
    std::fs::write(args.out.join("sweep.toml"), echo)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers.unwrap_or(0))
        .build()?;
    let mut files = Vec::new();
    for system in &systems {
        let result = pool.install(|| run_sweep(system, &grid))?;
        let name = format!("results_{}.dat", result.system_id);
        export_results(&result, &args.out.join(&name))?;
        println!("{} cells -> {}", result.rows.len(), args.out.join(&name).display());
        files.push(name);
    }
    write_manifest(&args.out, &grid, &files)?;
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportKind {
    Constellation,
    Partition,
    Demapper,
}

#[derive(Args)]
struct ExportArgs {
    /// Trained system directory.
    #[arg(long)]
    system: PathBuf,
    /// Which artifact to write.
    #[arg(long, value_enum)]
    what: ExportKind,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
}

fn cmd_export(args: &ExportArgs) -> Result<(), Box<dyn Error>> {
    let sys = TrainedSystem::load(&args.system)
        .map_err(|e| format!("cannot load system {}: {e}", args.system.display()))?;
    match args.what {
        ExportKind::Constellation => sys.constellation.export_tsv(&args.out)?,
        ExportKind::Partition => {
            let part = sys
                .partition
                .as_ref()
                .ok_or("this system uses the classic estimator and has no ring partition")?;
            part.export_grid_tsv(2.0, 50, &args.out)?;
        }
        ExportKind::Demapper => sys.net.save_tsv(&args.out)?,
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Args)]
struct CheckArgs {
    /// Run only checks whose name contains this substring.
    #[arg(long, default_value = "")]
    filter: String,
    /// Deliberately corrupt the angle gradient (negative control).
    #[arg(long, hide = true)]
    inject_angle_sign_bug: bool,
}

fn cmd_check(args: &CheckArgs) -> ExitCode {
    let faults = Faults {
        negate_angle_gradient: args.inject_angle_sign_bug,
    };
    let outcomes = run_checks(&args.filter, &faults);
    if outcomes.is_empty() {
        eprintln!("no check matches filter {:?}", args.filter);
        return ExitCode::FAILURE;
    }
    let mut failed = 0usize;
    for o in &outcomes {
        match &o.result {
            Ok(()) => println!("ok   {}", o.name),
            Err(msg) => {
                failed += 1;
                println!("FAIL {}: {msg}", o.name);
            }
        }
    }
    println!("{} passed, {failed} failed", outcomes.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Export(args) => cmd_export(args),
        Command::Check(args) => return cmd_check(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
