use clap::error::ErrorKind;
use clap::Parser;
use lba_sodkit::error::one_line;
use lba_sodkit::{exit, Cli};

fn main() {
    let code = match Cli::try_parse() {
        Ok(cli) => match lba_sodkit::run(cli) {
            Ok(code) => code,
            Err(e) => {
                eprintln!("{}", e.line());
                e.exit_code()
            }
        },
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            exit::OK
        }
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            eprintln!("error usage: a subcommand is required (eval, forward, train-toy, gradcheck)");
            exit::USAGE
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            eprintln!("error usage: {}", one_line(first.trim_start_matches("error: ")));
            exit::USAGE
        }
    };
    std::process::exit(code);
}
