use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sca_cli::{
    cmd_ablate, cmd_eval, cmd_gen, cmd_gradcheck, cmd_masks, CliError, CliResult, NeuronSpec, RunConfig, Split,
};
use sca_core::gradcheck::{GradGroup, GradcheckConfig};

#[derive(Parser)]
#[command(name = "sca", version, about = "Selective context aggregation: data, training, evaluation, checks")]
struct Cli {
    /// key=value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for data generation, initialisation and training
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// sca, baseline_no or baseline_ave
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Override one configuration key, e.g. --set epochs=10
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset
    Gen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one network and write a checkpoint with its history
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train and evaluate all three modes on the same data and seeds
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated seeds; defaults to --seed or the config seed
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Compare analytic gradients with central finite differences
    Gradcheck {
        /// Number of consecutive seeds, starting at --seed
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long, default_value_t = 4)]
        grid_height: usize,
        #[arg(long, default_value_t = 4)]
        grid_width: usize,
        /// N
        #[arg(long, default_value_t = 8)]
        in_channels: usize,
        /// M
        #[arg(long, default_value_t = 8)]
        out_channels: usize,
        /// Corrupt one group's analytic gradient, to confirm the check can fail
        #[arg(long, hide = true)]
        fault: Option<String>,
    },
    /// Export dependency masks as PGM images
    Masks {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Comma-separated neuron indices, or "grid"
        #[arg(long, default_value = "grid")]
        neurons: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for pair in &cli.overrides {
        cfg.apply_override(pair)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
        cfg.set("data_seed", &seed.to_string())?;
    }
    if let Some(t) = cli.threads {
        cfg.set("threads", &t.to_string())?;
    }
    if let Some(m) = &cli.mode {
        cfg.set("mode", m)?;
    }
    Ok(cfg)
}

fn parse_group(name: &str) -> CliResult<GradGroup> {
    GradGroup::ALL
        .into_iter()
        .find(|g| g.label().eq_ignore_ascii_case(name) || format!("{g:?}").eq_ignore_ascii_case(name))
        .ok_or_else(|| CliError::new("usage", format!("unknown gradient group {name:?}")))
}

fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    let cfg = run_config(&cli)?;
    match &cli.command {
        Command::Gen { out: dir } => {
            cmd_gen(&cfg, dir, out)?;
        }
        Command::Train { data, out: ckpt } => {
            sca_cli::cmd_train(&cfg, data, ckpt, out)?;
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            csv,
        } => {
            let split: Split = split.parse()?;
            cmd_eval(checkpoint, data, split, cfg.train.threads, csv.as_deref(), out)?;
        }
        Command::Ablate { data, seeds, csv } => {
            let seeds: Vec<u64> = match seeds {
                Some(list) => list
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse()
                            .map_err(|_| CliError::new("usage", format!("bad seed list {list:?}")))
                    })
                    .collect::<CliResult<_>>()?,
                None => vec![cfg.train.seed],
            };
            cmd_ablate(&cfg, data, &seeds, csv.as_deref(), out)?;
        }
        Command::Gradcheck {
            seeds,
            grid_height,
            grid_width,
            in_channels,
            out_channels,
            fault,
        } => {
            let gc = GradcheckConfig {
                seeds: *seeds,
                first_seed: cli.seed.unwrap_or(0),
                grid_height: *grid_height,
                grid_width: *grid_width,
                in_channels: *in_channels,
                out_channels: *out_channels,
                fault: fault.as_deref().map(parse_group).transpose()?,
                ..GradcheckConfig::default()
            };
            cmd_gradcheck(&gc, out)?;
        }
        Command::Masks {
            checkpoint,
            image,
            neurons,
            out: dir,
        } => {
            let spec: NeuronSpec = neurons.parse()?;
            cmd_masks(checkpoint, image, &spec, dir, out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", CliError::new("usage", first));
            return ExitCode::from(2);
        }
    };
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    match run(cli, &mut lock) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = lock.flush();
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
