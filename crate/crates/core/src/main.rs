use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use zoomlab::commands::{self, Failure};
use zoomlab::config::Variant;

#[derive(Parser)]
#[command(name = "zoomlab", version, about = "Train and audit zoom-utility policies on a synthetic expression world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one variant for every configured seed and write a run directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        variant: Option<Variant>,
        /// Replaces the configured seed list; repeatable.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        #[arg(long)]
        steps: Option<usize>,
        /// Defaults to the config's out_dir, then $ZOOMLAB_OUT/<variant>.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run rollouts on one thread.
        #[arg(long)]
        serial: bool,
        #[arg(env = "ZOOMLAB_OUT", hide = true, long = "out-root")]
        out_root: Option<PathBuf>,
        /// Dotted config overrides, e.g. `--world.quality_penalty 0.2`.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
        overrides: Vec<String>,
    },
    /// Check every trajectory of a log against the action protocol.
    Validate {
        log: PathBuf,
        #[arg(long, default_value_t = 4)]
        budget: usize,
    },
    /// Score a log group by group and print one JSON breakdown per trajectory.
    Score {
        log: PathBuf,
        /// Experiment config supplying reward, calibration and group size.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Calibrator checkpoint; without one every φ is 1.
        #[arg(long)]
        calibrator: Option<PathBuf>,
    },
    /// Rebuild report.json and plot tables from a run directory.
    Report { dir: PathBuf },
    /// Print the resolved world table.
    DumpWorld {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
        overrides: Vec<String>,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train {
            config,
            variant,
            seeds,
            steps,
            out,
            serial,
            out_root,
            overrides,
        } => {
            // everything after the first override lands here, flags included
            const FLAGS: [&str; 6] = ["--config", "--variant", "--seed", "--steps", "--out", "--serial"];
            if let Some(f) = overrides.iter().find(|a| FLAGS.contains(&a.as_str())) {
                return Err(Failure::input(format!("`{f}` must come before the config overrides")));
            }
            let mut ov = commands::parse_overrides(&overrides)?;
            if let Some(v) = variant {
                ov.push(("variant".into(), v.name().into()));
            }
            if let Some(s) = steps {
                ov.push(("steps".into(), s.to_string()));
            }
            if !seeds.is_empty() {
                let list: Vec<String> = seeds.iter().map(u64::to_string).collect();
                ov.push(("seeds".into(), format!("[{}]", list.join(", "))));
            }
            let cfg = commands::load(config.as_deref(), &ov)?;
            let dir = commands::output_dir(out, &cfg, out_root);
            let report = commands::train(&cfg, &dir, !serial)?;
            println!("{} -> {}", cfg.variant, dir.display());
            for s in &report.seeds {
                println!(
                    "seed {}: accuracy {:.4} au_f1 {:.4} zoom_ratio {:.4} mean_reward {:.4}",
                    s.seed, s.accuracy, s.au_f1, s.zoom_ratio, s.mean_reward
                );
            }
            println!("config_hash {}", report.config_hash);
        }
        Command::Validate { log, budget } => print!("{}", commands::validate_log(&log, budget)?),
        Command::Score { log, config, calibrator } => {
            let cfg = commands::load(config.as_deref(), &[])?;
            print!("{}", commands::score_log(&log, &cfg, calibrator.as_deref())?);
        }
        Command::Report { dir } => {
            let r = commands::report(&dir)?;
            println!(
                "{}: {} seeds, accuracy {:.4} ± {:.4}, zoom_ratio {:.4} ± {:.4}",
                r.variant,
                r.seeds.len(),
                r.accuracy.mean,
                r.accuracy.std,
                r.zoom_ratio.mean,
                r.zoom_ratio.std
            );
        }
        Command::DumpWorld { config, overrides } => {
            let cfg = commands::load(config.as_deref(), &commands::parse_overrides(&overrides)?)?;
            print!("{}", commands::dump_world(&cfg));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            // validate's verdicts go to stdout even when it fails
            if f.code == commands::EXIT_DOMAIN && f.message.ends_with('\n') {
                print!("{}", f.message);
            } else {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code as u8)
        }
    }
}
