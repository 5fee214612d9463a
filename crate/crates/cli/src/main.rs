use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use gendyne_cli::args::Cli;

fn main() -> ExitCode {
    // Usage errors are configuration errors (exit 1), not clap's default 2.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match gendyne_cli::run(cli) {
        Ok(report) => {
            for f in &report.files {
                eprintln!("wrote {}", f.path.display());
            }
            if let Some(s) = &report.stdout {
                // A closed pipe downstream is not an error of ours.
                let _ = writeln!(std::io::stdout(), "{s}");
            }
            match report.failure {
                Some(e) => {
                    eprintln!("gendyne: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("gendyne: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
