//! `mbs` — macroblock channel-width scaling toolkit.
//!
//! Subcommands mirror the planning pipeline: `zoo emit` writes an
//! architecture document, `stats simulate` measures non-zero ReLU
//! probabilities on synthetic images, `analyze` prints the
//! receptive-field table, `plan` computes the scaling plan, `apply`
//! emits the compact architecture, and `report` / `tradeoff` produce
//! reduction tables.
//!
//! Every subcommand is pure with respect to its declared inputs and
//! outputs: re-running with identical inputs produces byte-identical
//! artifacts. Exit codes: 0 success, 2 I/O failure, 3 validation
//! failure, 4 degenerate planner input under `--strict`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mbs_core::ir::{apply_plan, parse_and_resolve};
use mbs_core::planner::{load_plan, plan_from_widths, run_mbs, PlannerConfig};
use mbs_core::report::{
    compare, report_csv, report_json, report_text, tradeoff_csv, tradeoff_table, tradeoff_text,
};
use mbs_core::rf::{classify_layers, compute_rf, table_csv, table_text};
use mbs_core::stats::{load_stats, simulate_stats};
use mbs_core::zoo::{generate, ZooFamily, ZooSpec};
use mbs_core::ModelGraph;

// ─── Error handling ──────────────────────────────────────────────────────────

enum Category {
    Io,
    Validation,
    Degenerate,
}

impl Category {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Io => 2,
            Self::Validation => 3,
            Self::Degenerate => 4,
        }
    }
    fn label(&self) -> &'static str {
        match self {
            Self::Io => "io",
            Self::Validation => "validation",
            Self::Degenerate => "degenerate",
        }
    }
}

struct CliError {
    category: Category,
    message: String,
}

impl CliError {
    fn io(message: String) -> Self {
        Self {
            category: Category::Io,
            message,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.category.label(), self.message)
    }
}

impl From<mbs_core::Error> for CliError {
    fn from(e: mbs_core::Error) -> Self {
        Self {
            category: Category::Validation,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

// ─── Arguments ───────────────────────────────────────────────────────────────

#[derive(Parser)]
#[command(
    name = "mbs",
    version,
    about = "Macroblock channel-width scaling planner for CNN architectures"
)]
struct Cli {
    /// Print progress notes to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Args)]
struct OutputArgs {
    /// Output path (stdout when omitted, where supported).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite an existing output path.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Print the receptive-field table of a model.
    Analyze {
        #[arg(long)]
        model: PathBuf,
        /// Receptive-field threshold in pixels.
        #[arg(long, conflicts_with = "z_factor")]
        z: Option<f64>,
        /// Threshold as a factor of the input resolution (z = k * L).
        #[arg(long)]
        z_factor: Option<f64>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Activation statistics operations.
    Stats {
        #[command(subcommand)]
        command: StatsCommand,
    },
    /// Compute a channel-scaling plan from a model and its stats.
    Plan {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long, conflicts_with = "z_factor")]
        z: Option<f64>,
        #[arg(long)]
        z_factor: Option<f64>,
        /// Fail (exit 4) when a macroblock has no effective-flop signal.
        #[arg(long)]
        strict: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Apply a plan, emitting the compact architecture document.
    Apply {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Compare a plan and/or alpha baselines against the original.
    Report {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Explicit per-macroblock compact widths (comma separated),
        /// e.g. published configurations; alternative to --plan.
        #[arg(long, value_delimiter = ',', conflicts_with = "plan")]
        widths: Option<Vec<u32>>,
        /// Uniform scaling baseline(s); repeatable.
        #[arg(long)]
        alpha: Vec<f64>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Sweep the threshold factor and emit one reduction row per k.
    Tradeoff {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        /// Threshold factors to sweep; repeatable. Default
        /// 1.4, 1.2, 1.0, 0.8, 0.6.
        #[arg(long = "z-factor")]
        z_factor: Vec<f64>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Reference architecture generators.
    Zoo {
        #[command(subcommand)]
        command: ZooCommand,
    },
}

#[derive(Subcommand)]
enum StatsCommand {
    /// Simulate stats with the built-in dense inference engine.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        /// Number of synthetic images.
        #[arg(long, default_value_t = 8)]
        images: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Subcommand)]
enum ZooCommand {
    /// Emit a reference architecture document.
    Emit {
        /// Family name (resnet-cifar, resnet-imagenet-basic,
        /// resnet-imagenet-bottleneck, mobilenet-v1, densenet-bc).
        #[arg(long)]
        family: String,
        #[arg(long)]
        depth: Option<u32>,
        /// Input resolution L (for families with variants).
        #[arg(long)]
        resolution: Option<u32>,
        #[command(flatten)]
        output: OutputArgs,
    },
}

// ─── I/O helpers ─────────────────────────────────────────────────────────────

fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))
}

fn load_model(path: &Path) -> CliResult<ModelGraph> {
    Ok(parse_and_resolve(&read_file(path)?)?)
}

fn write_output(output: &OutputArgs, content: &str) -> CliResult<()> {
    match &output.out {
        None => {
            print!("{content}");
            Ok(())
        }
        Some(path) => {
            if path.exists() && !output.force {
                return Err(CliError::io(format!(
                    "output path {} exists (use --force to overwrite)",
                    path.display()
                )));
            }
            std::fs::write(path, content)
                .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
        }
    }
}

fn planner_config(z: Option<f64>, k: Option<f64>) -> PlannerConfig {
    PlannerConfig { z, k_factor: k }
}

// ─── Subcommand bodies ───────────────────────────────────────────────────────

fn run(cli: Cli) -> CliResult<()> {
    let verbose = cli.verbose;
    let note = |msg: &str| {
        if verbose {
            eprintln!("mbs: {msg}");
        }
    };
    match cli.command {
        Command::Analyze {
            model,
            z,
            z_factor,
            format,
            output,
        } => {
            let graph = load_model(&model)?;
            let (z, _) = planner_config(z, z_factor).resolve(graph.input_resolution)?;
            let rf_table = compute_rf(&graph);
            let profile = classify_layers(&graph, &rf_table, z)?;
            note(&format!("analyzed {} layers", rf_table.len()));
            let rendered = match format {
                Format::Csv => table_csv(&graph, &rf_table, &profile),
                _ => table_text(&graph, &rf_table, &profile),
            };
            write_output(&output, &rendered)
        }
        Command::Stats {
            command:
                StatsCommand::Simulate {
                    model,
                    images,
                    seed,
                    output,
                },
        } => {
            let graph = load_model(&model)?;
            let stats = simulate_stats(&graph, images, seed)?;
            note(&format!(
                "simulated {} images over {} conv layers",
                images,
                stats.layers.len()
            ));
            write_output(&output, &stats.to_document())
        }
        Command::Plan {
            model,
            stats,
            z,
            z_factor,
            strict,
            output,
        } => {
            let graph = load_model(&model)?;
            let stats = load_stats(&read_file(&stats)?, Some(&graph))?;
            let plan = run_mbs(&graph, &stats, &planner_config(z, z_factor))?;
            if plan.has_degenerate() {
                let msg = "planner saw macroblocks without effective-flop signal; their beta stays 1";
                if strict {
                    return Err(CliError {
                        category: Category::Degenerate,
                        message: msg.into(),
                    });
                }
                eprintln!("warning: {msg}");
            }
            write_output(&output, &plan.to_document())
        }
        Command::Apply {
            model,
            plan,
            output,
        } => {
            let graph = load_model(&model)?;
            let plan = load_plan(&read_file(&plan)?)?;
            let compact = apply_plan(&graph, &plan)?;
            write_output(&output, &compact.to_document())
        }
        Command::Report {
            model,
            plan,
            widths,
            alpha,
            format,
            output,
        } => {
            let graph = load_model(&model)?;
            let plan = match (plan, widths) {
                (Some(path), _) => Some(load_plan(&read_file(&path)?)?),
                (None, Some(widths)) => Some(plan_from_widths(&graph, &widths)?),
                (None, None) => None,
            };
            let report = compare(&graph, plan.as_ref(), &alpha)?;
            let rendered = match format {
                Format::Csv => report_csv(&report),
                Format::Json => report_json(&report),
                Format::Text => report_text(&report),
            };
            write_output(&output, &rendered)
        }
        Command::Tradeoff {
            model,
            stats,
            z_factor,
            format,
            output,
        } => {
            let graph = load_model(&model)?;
            let stats = load_stats(&read_file(&stats)?, Some(&graph))?;
            let ks = if z_factor.is_empty() {
                vec![1.4, 1.2, 1.0, 0.8, 0.6]
            } else {
                z_factor
            };
            let rows = tradeoff_table(&graph, &stats, &ks)?;
            let rendered = match format {
                Format::Csv => tradeoff_csv(&rows),
                _ => tradeoff_text(&rows),
            };
            write_output(&output, &rendered)
        }
        Command::Zoo {
            command:
                ZooCommand::Emit {
                    family,
                    depth,
                    resolution,
                    output,
                },
        } => {
            let family: ZooFamily = family.parse()?;
            let spec = ZooSpec {
                family,
                depth,
                input_resolution: resolution,
            };
            let graph = generate(&spec)?;
            note(&format!(
                "generated {} with {} conv layers",
                graph.name,
                graph.conv_layers().count()
            ));
            write_output(&output, &graph.to_document())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.category.exit_code())
        }
    }
}
