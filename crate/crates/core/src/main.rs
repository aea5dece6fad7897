use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use gentle_reach::data::{read_dataset, write_dataset, DatasetConfig};
use gentle_reach::eval::{run_ablation, EvalReport, ReportFormat};
use gentle_reach::expert::{generate_demos, ExpertConfig};
use gentle_reach::policy::{train, PolicyConfig, PolicyWeights, Variant};
use gentle_reach::scene::{generate, ShelfSpec};
use gentle_reach::teleop::{serve, SessionConfig};
use gentle_reach::Error;

#[derive(Parser)]
#[command(name = "gentle-reach", version, about = "Shelf-clutter simulator and force-ablation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one scene schematic.
    GenScene {
        #[arg(long)]
        seed: u64,
        /// Output TOML file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Record successful expert demonstrations into a dataset directory.
    Demo {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train one policy variant on a demonstration dataset.
    Train {
        #[arg(long)]
        variant: Variant,
        /// Dataset directory written by `demo`.
        #[arg(long)]
        demos: PathBuf,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output weights directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate trained variants on shared scenes.
    Eval {
        /// Weights directories; each carries its variant.
        #[arg(long, num_args = 1.., required = true)]
        weights: Vec<PathBuf>,
        #[arg(long, default_value_t = 40)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output JSON report.
        #[arg(long)]
        report: PathBuf,
    },
    /// Render a saved evaluation report.
    Report {
        /// JSON report written by `eval`.
        input: PathBuf,
        /// Include force/motion heatmaps.
        #[arg(long)]
        heatmaps: bool,
        #[arg(long, default_value = "text")]
        format: ReportFormat,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the teleoperation bridge.
    Serve {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        /// Directory for saved teleoperated episodes.
        #[arg(long, default_value = "teleop_episodes")]
        out_dir: PathBuf,
    },
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::GenScene { seed, out } => {
            let schematic = generate(seed, &ShelfSpec::default())?;
            write_or_print(out.as_deref(), &schematic.to_text())?;
            if out.is_some() {
                print!("{schematic}");
            }
        }
        Command::Demo { n, seed, out_dir } => {
            let demos = generate_demos(n, seed, ExpertConfig::default())?;
            write_dataset(&out_dir, &demos.episodes, DatasetConfig::default())?;
            let ticks: usize = demos.episodes.iter().map(|e| e.len()).sum();
            println!(
                "{} demonstrations from {} scenes, {ticks} ticks, written to {}",
                demos.episodes.len(),
                demos.attempts,
                out_dir.display()
            );
        }
        Command::Train {
            variant,
            demos,
            epochs,
            seed,
            out,
        } => {
            let config = PolicyConfig {
                epochs,
                ..PolicyConfig::with_variant(variant)
            };
            let ds = read_dataset(&demos, DatasetConfig::default())?;
            let result = train(&ds, config, seed)?;
            result.weights.save(&out)?;
            let curve: String = result
                .loss_curve
                .iter()
                .enumerate()
                .map(|(e, l)| format!("{e},{l}\n"))
                .collect();
            fs::write(out.join("loss.csv"), format!("epoch,loss\n{curve}"))?;
            let first = result.loss_curve.first().copied().unwrap_or(f64::NAN);
            let last = result.loss_curve.last().copied().unwrap_or(f64::NAN);
            println!("{variant}: loss {first:.4} -> {last:.4}, weights in {}", out.display());
        }
        Command::Eval {
            weights,
            n,
            seed,
            report,
        } => {
            let mut by_variant = BTreeMap::new();
            for dir in &weights {
                let w = PolicyWeights::load(dir)?;
                by_variant.insert(w.config.variant, w);
            }
            let variants: Vec<Variant> = by_variant.keys().copied().collect();
            let result = run_ablation(&by_variant, &variants, n, seed)?;
            let json = serde_json::to_string_pretty(&result).map_err(|e| Error::Parse(e.to_string()))?;
            write_or_print(Some(&report), &json)?;
            print!("{}", result.to_text(false));
        }
        Command::Report {
            input,
            heatmaps,
            format,
            out,
        } => {
            let text = fs::read_to_string(&input)?;
            let report: EvalReport =
                serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", input.display())))?;
            write_or_print(out.as_deref(), &report.render(format, heatmaps))?;
        }
        Command::Serve { port, out_dir } => {
            let config = SessionConfig {
                out_dir,
                ..SessionConfig::default()
            };
            eprintln!("teleop bridge on ws://127.0.0.1:{port}");
            serve(port, config)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
