mod args;
mod bench;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                // A flag value that parsed as the wrong thing is bad input, not a flag clash.
                ErrorKind::ValueValidation | ErrorKind::InvalidValue => 2,
                _ => 3,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match &cli.command {
        Command::Aggregate(a) => commands::aggregate_cmd(a),
        Command::Mine(a) => commands::mine_cmd(a),
        Command::Oracle(a) => commands::oracle_cmd(a),
        Command::Synth(a) => commands::synth_cmd(a),
        Command::Bench(a) => bench::bench_cmd(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
