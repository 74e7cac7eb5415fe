use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use adaptprompt_cli::{run, CliResult, Command, RunConfig};

#[derive(Parser)]
#[command(name = "adaptprompt", version, about = "Adapter and prompt tuning on a frozen dual encoder")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the seeded synthetic corpus and its manifests.
    Synth(Common),
    /// Write a randomly initialized backbone.
    InitBackbone(Common),
    /// Train adapter/prompts (or a linear probe) on the train manifest.
    Train(Common),
    /// Score the test manifest and write the AP/accuracy report.
    Eval(Common),
    /// Multi-class generator attribution over the fake records.
    Attribute(Common),
    /// Radial power spectra and spike detection per set.
    Spectrum(Common),
    /// Metrics under blur and JPEG-like perturbations.
    Robust(Common),
    /// Dump raw or adapted feature vectors.
    Export(Common),
    /// Trainable versus total parameter count.
    Count(Common),
}

#[derive(Args)]
struct Common {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Further settings as `--key value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    settings: Vec<String>,
}

fn resolve(c: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &c.config {
        cfg.apply_file(p)?;
    }
    cfg.apply_overrides(&c.settings)?;
    if let Some(s) = c.seed {
        cfg.set("seed", &s.to_string())?;
    }
    if let Some(o) = &c.out {
        cfg.set("out", &o.to_string_lossy())?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let (command, common) = match &cli.command {
        Cmd::Synth(c) => (Command::Synth, c),
        Cmd::InitBackbone(c) => (Command::InitBackbone, c),
        Cmd::Train(c) => (Command::Train, c),
        Cmd::Eval(c) => (Command::Eval, c),
        Cmd::Attribute(c) => (Command::Attribute, c),
        Cmd::Spectrum(c) => (Command::Spectrum, c),
        Cmd::Robust(c) => (Command::Robust, c),
        Cmd::Export(c) => (Command::Export, c),
        Cmd::Count(c) => (Command::Count, c),
    };
    let result = resolve(common).and_then(|cfg| {
        log::info!("resolved config for {}:\n{}", command.name(), cfg.to_text().trim_end());
        run(command, &cfg)
    });
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.one_line());
            ExitCode::FAILURE
        }
    }
}
