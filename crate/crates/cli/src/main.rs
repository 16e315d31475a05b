use clap::Parser;
use sleeplite_cli::{classify, error_line, exit_code, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return;
        }
        Err(e) => {
            let msg = e.kind().to_string();
            let _ = e.print();
            let err = anyhow::Error::new(sleeplite_cli::config::ConfigError(format!("usage: {msg}")));
            eprintln!("{}", error_line(&err));
            std::process::exit(1);
        }
    };
    if let Err(err) = sleeplite_cli::run(&cli) {
        eprintln!("{}", error_line(&err));
        std::process::exit(exit_code(classify(&err)));
    }
}
