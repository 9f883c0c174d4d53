use clap::Parser;
use hypcbm_cli::args::Cli;

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = hypcbm_cli::run(&cli) {
        eprintln!("{}", e.report_line());
        std::process::exit(1);
    }
}
