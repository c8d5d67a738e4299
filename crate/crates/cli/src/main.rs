//! Binary entry point: argument parsing and dispatch to the subcommand
//! implementations in the library.

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use pcadv_cli::run::{
    self, parse_kinds, parse_list, parse_mode, AttackFlags, Ctx, DefendFlags,
};

#[derive(Parser)]
#[command(name = "pcadv", version, about = "Adversarial attacks and defenses on point-cloud autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file.
    #[arg(long, default_value = "configs/desk.toml")]
    config: PathBuf,
    /// Worker threads for attack sweeps.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Store clouds as ASCII PLY instead of XYZ.
    #[arg(long)]
    ply: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the procedural dataset and its manifest.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the victim autoencoder, or the transfer copy.
    TrainAe {
        #[command(flatten)]
        common: Common,
        /// Train the transfer model (different initialization seed).
        #[arg(long)]
        transfer: bool,
    },
    /// Train the shape classifier used for semantic metrics.
    TrainClassifier {
        #[command(flatten)]
        common: Common,
    },
    /// Run the attack sweep over source and target classes.
    Attack {
        #[command(flatten)]
        common: Common,
        /// Attack mode: latent or output. Defaults to the config.
        #[arg(long)]
        mode: Option<String>,
        /// Pick the easiest target class per source instead of sweeping.
        #[arg(long)]
        untargeted: bool,
        /// Comma-separated geometric weights; runs one variant per value.
        #[arg(long)]
        lambda_sweep: Option<String>,
    },
    /// Apply defenses to clean and attacked clouds, then train detectors.
    Defend {
        #[command(flatten)]
        common: Common,
        /// Comma-separated attack variants to defend; `clean` is allowed.
        /// Defaults to clean plus the stored base variants.
        #[arg(long)]
        modes: Option<String>,
        /// Defense kind: surface, critical, or all.
        #[arg(long, default_value = "all")]
        kinds: String,
    },
    /// Compare victim and transfer reconstructions of stored attacks.
    TransferEval {
        #[command(flatten)]
        common: Common,
        /// Comma-separated attack variants; defaults to the stored base ones.
        #[arg(long)]
        modes: Option<String>,
    },
    /// Grid-search surface-defense parameters on the output attack.
    CalibrateDefense {
        #[command(flatten)]
        common: Common,
        /// Comma-separated neighbor counts.
        #[arg(long, default_value = "1,2,4,8")]
        k_grid: String,
        /// Comma-separated distance thresholds.
        #[arg(long, default_value = "0.1,0.15,0.2,0.3")]
        delta_grid: String,
    },
    /// Reconstruct the source-to-adversarial interpolation for one pair.
    Interpolate {
        #[command(flatten)]
        common: Common,
        /// Attack mode whose stored pairs to use. Defaults to the config.
        #[arg(long)]
        mode: Option<String>,
        /// Pair name; defaults to the first stored pair.
        #[arg(long)]
        pair: Option<String>,
        /// Comma-separated interpolation coefficients.
        #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
        alphas: String,
    },
    /// Render the CSV tables and provenance header.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::GenData { common } => run::gen_data(&ctx(common)?),
        Command::TrainAe { common, transfer } => run::train_ae_cmd(&ctx(common)?, *transfer),
        Command::TrainClassifier { common } => run::train_classifier_cmd(&ctx(common)?),
        Command::Attack {
            common,
            mode,
            untargeted,
            lambda_sweep,
        } => {
            let flags = AttackFlags {
                mode: mode.as_deref().map(parse_mode).transpose()?,
                untargeted: *untargeted,
                lambda_sweep: lambda_sweep
                    .as_deref()
                    .map(|s| parse_list::<f64>(s, "lambda"))
                    .transpose()?,
            };
            run::attack_cmd(&ctx(common)?, &flags)
        }
        Command::Defend {
            common,
            modes,
            kinds,
        } => {
            let flags = DefendFlags {
                modes: modes
                    .as_deref()
                    .map(|s| parse_list::<String>(s, "mode"))
                    .transpose()?
                    .unwrap_or_default(),
                kinds: parse_kinds(kinds)?,
            };
            run::defend_cmd(&ctx(common)?, &flags)
        }
        Command::TransferEval { common, modes } => {
            let modes = modes
                .as_deref()
                .map(|s| parse_list::<String>(s, "mode"))
                .transpose()?
                .unwrap_or_default();
            run::transfer_eval_cmd(&ctx(common)?, &modes)
        }
        Command::CalibrateDefense {
            common,
            k_grid,
            delta_grid,
        } => run::calibrate_defense_cmd(
            &ctx(common)?,
            &parse_list::<usize>(k_grid, "k")?,
            &parse_list::<f64>(delta_grid, "delta")?,
        ),
        Command::Interpolate {
            common,
            mode,
            pair,
            alphas,
        } => run::interpolate_cmd(
            &ctx(common)?,
            mode.as_deref().map(parse_mode).transpose()?,
            pair.as_deref(),
            &parse_list::<f64>(alphas, "alpha")?,
        ),
        Command::Report { common } => run::report_cmd(&ctx(common)?),
    }
}

fn ctx(common: &Common) -> Result<Ctx> {
    Ctx::new(&common.config, common.ply, common.workers)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Err(error) = dispatch(&cli.command) {
        eprintln!("error: {error:#}");
        std::process::exit(1);
    }
}
