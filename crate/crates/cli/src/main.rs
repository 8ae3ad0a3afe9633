use std::io::Write;

use clap::Parser;
use levy_mlmc::args::{Cli, Command};
use levy_mlmc::{experiment, output, plot};

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::DryRun { config } => print_plan(&config.resolve()?),
        Command::Run { config, out, threads, dry_run } => {
            let cfg = config.resolve()?;
            if dry_run {
                return print_plan(&cfg);
            }
            if let Some(n) = threads {
                rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
            }
            let outcome = experiment::run(&cfg, &mut |line| eprintln!("{line}"))?;
            output::write_outputs(&out, &outcome)?;
            eprintln!("wrote {} ({:.1} s)", out.display(), outcome.wallclock_s);
            Ok(())
        }
        Command::EmitPlot { input, out } => {
            let fit = plot::emit(&input, &out)?;
            println!("slope {:.6}", fit.slope);
            Ok(())
        }
    }
}

fn print_plan(cfg: &levy_mlmc::config::ExperimentConfig) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(&experiment::dry_run(cfg)?)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}
